
import logging
import sys
import threading

from termcolor import colored


class StdoutHandler(logging.StreamHandler):

    def __init__(self):
        super().__init__(sys.stdout)
        self.setFormatter(ColorFormatter())

    def handleError(self, record):
        t, v, tb = sys.exc_info()
        if t == BrokenPipeError:
            # the reader of the pipe (less, head) is gone - stop quietly
            raise SystemExit(0)

        else:
            super().handleError(record)


class ColorFormatter(logging.Formatter):
    """Logging colored formatter

    Records that carry an `epoch` attribute are rendered as a row of the
    training table, records that carry a `matrixrow` are rendered as one
    row of a transition matrix. Everything else uses the default format."""

    level_colors = {
        logging.DEBUG: 'dark_grey',
        logging.WARNING: 'yellow',
        logging.ERROR: 'red',
        logging.CRITICAL: 'red',
    }

    def __init__(self, default_format=None, epoch_format=None, matrix_format=None):
        super().__init__(default_format)

        if default_format is None:
            default_format = "%(color)s%(where)s%(message)s"
        if epoch_format is None:
            epoch_format = ("%(color)s%(where)s%(shortname)-6s epoch %(epoch)4d"
                            "  train %(train_loss)10.6f  val %(val_loss)10.6f"
                            "  acc %(val_acc)7.3f%%  %(message)s")
        if matrix_format is None:
            matrix_format = "%(color)s%(where)s%(shortname)-6s %(matrixrow)s  %(message)s"

        self.formatter_epoch = logging.Formatter(epoch_format)
        self.formatter_matrix = logging.Formatter(matrix_format)
        self.formatter_default = logging.Formatter(default_format)

    def format(self, record):
        record.shortname = record.name.split(".")[-1]
        if not hasattr(record, 'color'):
            record.color = ""
        if not hasattr(record, 'where'):
            record.where = ""

        if hasattr(record, 'epoch'):
            text = self.formatter_epoch.format(record)
        elif hasattr(record, 'matrixrow'):
            text = self.formatter_matrix.format(record)
        else:
            text = self.formatter_default.format(record)

        if record.color:
            text += TermColorFilter.text_styles["reset"]
        if record.levelno in self.level_colors:
            text = colored(text, self.level_colors[record.levelno])
        return text


class TermColorFilter(logging.Filter):

    text_styles = dict(
        blue='\x1b[38;5;39m',
        green='\033[32m',
        red='\x1b[38;5;196m',
        grey='\033[90m',
        yellow='\x1b[38;5;226m',
        bold_blue='\033[1;34m',
        bold_green='\033[1;36m',
        reset='\x1b[0m',
        white_on_blue='\033[1;37;104m',
    )

    def __init__(self, color):
        super().__init__()
        if color in self.text_styles:
            self.color = self.text_styles[color]
        else:
            self.color = color

    def filter(self, record):
        if not hasattr(record, 'color'):
            record.color = self.color
        return True


class AddTrialFilter(logging.Filter):
    """Inject the trial that is currently running into the log records.

    The harness sets the location before each method of a trial, so that
    interleaved output of parallel trials can still be told apart. The
    location is kept per thread."""

    def __init__(self):
        super().__init__()
        self.local = threading.local()

    def set_location(self, method, seed):
        self.local.location = f"[{method}:{seed}] "

    def clear(self):
        self.local.location = None

    def filter(self, record):
        location = getattr(self.local, 'location', None)
        if location is not None and not hasattr(record, 'where'):
            record.where = location
        return True


class MatrixDump:

    def __init__(self, logger_name="noisylabels.transition.matrix", precision=4):
        self.logger = logging.getLogger(logger_name)
        self.precision = precision

    def __call__(self, matrix, title=None):
        if title is not None:
            self.logger.info(title)
        for i, row in enumerate(matrix):
            text = " ".join(f"{x:{self.precision + 3}.{self.precision}f}" for x in row)
            self.logger.info(f"row {i}", extra=dict(matrixrow=text))


# logger name -> color of its records
logger_colors = {
    "noisylabels.trainer.stage": TermColorFilter("bold_blue"),
    "noisylabels.transition.matrix": TermColorFilter("green"),
}


def setup_logging(loglevel=logging.INFO, quiet=0):
    level = logging.getLevelName(loglevel) if isinstance(loglevel, str) else loglevel
    level = min(level + 10 * quiet, logging.CRITICAL)
    logging.basicConfig(level=level, handlers=[StdoutHandler()], force=True)
    for name, color in logger_colors.items():
        logging.getLogger(name).addFilter(color)
