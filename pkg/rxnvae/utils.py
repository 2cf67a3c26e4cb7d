import base64
import datetime
import hashlib
import os

import numpy as np


def get_iso_timestamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def get_hms_str():
    """Return HH:MM:SS."""
    return datetime.datetime.now().strftime("%H:%M:%S")


def format_duration(seconds):
    """Format seconds to +MM:SS or +HH:MM:SS."""
    mm, ss = divmod(int(seconds), 60)
    if mm >= 60:
        hh, mm = divmod(mm, 60)
        return f"+{hh:02}:{mm:02}:{ss:02}"
    return f"+{mm:02}:{ss:02}"


def ensure_parent_dir(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def content_hash(path, chunk_size=1 << 16):
    """sha256 of a file, git-style short form not applied."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def encode_f32_b64(vector):
    """Little-endian float32 bytes of a vector, base64 encoded."""
    return base64.b64encode(np.asarray(vector, dtype="<f4").tobytes()).decode("ascii")
