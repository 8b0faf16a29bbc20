from .datagen import BlobSpec, generate_blobs, load_dataset
from .errors import ContractViolation

dataset_suffixes = (".txt", ".data", ".csv")


def parse_blob_source(source):
    """BlobSpec from 'blobs:c=4,d=16,n=2500,sigma=1.0,seed=0,separation=6'"""

    keys = dict(c=("c", int), d=("d", int), n=("n_per_class", int), sigma=("noise_sigma", float),
                seed=("seed", int), separation=("separation", float))
    kwargs = {}
    body = source[len("blobs:"):]
    for item in filter(None, body.split(",")):
        key, _, value = item.partition("=")
        if key not in keys:
            raise ContractViolation(f"unknown blob parameter '{key}' in {source}")
        name, conv = keys[key]
        try:
            kwargs[name] = conv(value)
        except ValueError:
            raise ContractViolation(f"bad value '{value}' for blob parameter '{key}'") from None
    return BlobSpec(**kwargs)


def make_dataset(source):

    # Instantiate the dataset from a file or from a generator description
    if isinstance(source, BlobSpec):
        return generate_blobs(source)

    source = str(source)
    if source == "blobs" or source.startswith("blobs:"):
        return generate_blobs(parse_blob_source(source))

    elif source.endswith(dataset_suffixes):
        return load_dataset(source)

    else:
        raise ContractViolation(f"unknown dataset source: {source}")
