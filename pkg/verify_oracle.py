import sys
import os
import time

sys.path.append(os.getcwd())

from rxnvae.providers.oracle import probe_oracle

endpoints = sys.argv[1:] or ["tcp://127.0.0.1:8765"]

print("Probing oracle endpoints...")
for endpoint in endpoints:
    try:
        start = time.time()
        success, msg = probe_oracle(endpoint, timeout=5)
        elapsed = time.time() - start
        print(f"ENDPOINT: {endpoint} -> Success: {success}, Msg: {msg} ({elapsed:.2f}s)")
    except Exception as e:
        print(f"ENDPOINT: {endpoint} -> CRASHed: {e}")
