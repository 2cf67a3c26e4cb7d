import logging
import time

from .utils import ensure_parent_dir, format_duration, get_hms_str

log = logging.getLogger(__name__)


class RunLogger:
    """Append-only event log for a command run.

    One line per event, e.g.
        [HH:MM:SS] [+MM:SS] EPOCH 3/30 total=12.41 jt=4.02 rxn=7.90 kl=0.49
        [HH:MM:SS] [+01:12] BEST  T3(AQB,QC) score=1.70 (iter 2)
    """

    def __init__(self, log_path=None, ui_callback=None):
        self.log_path = log_path
        self.ui_callback = ui_callback
        self.last_line = ""
        self.lines = []
        self._start = time.monotonic()
        if log_path:
            ensure_parent_dir(log_path)

    def elapsed_seconds(self):
        return time.monotonic() - self._start

    def log_event(self, event_type, info, elapsed=None, suffix=""):
        hms = get_hms_str()
        if elapsed is None:
            elapsed = self.elapsed_seconds()
        line = f"[{hms}] [{format_duration(elapsed)}] {event_type:<5} {info}"
        if suffix:
            line += f" ({suffix})"

        self.last_line = line
        self.lines.append(line)

        if self.log_path:
            try:
                with open(self.log_path, "a", encoding="utf-8") as f:
                    f.write(line + "\n")
            except OSError as e:
                log.warning("Run log write failed: %s", e)

        if self.ui_callback:
            self.ui_callback(line)

    def get_last_line(self):
        return self.last_line
