"""Fetch benchmark CSVs listed in the package manifest into a data directory.

Tries the manifest URL first, then the PyPI source-distribution mirror when
one is listed. Verifies the sha256 when the manifest records one.

    python scripts/fetch_data.py ETTh1 --dest data
"""
import argparse
import hashlib
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

from mlpiconv.data import manifest


def _from_url(url, target):
    with urllib.request.urlopen(url, timeout=30) as r:
        target.write_bytes(r.read())


def _from_sdist(mirror, target):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--no-binary", ":all:",
                        "-q", "-d", tmp, mirror["pypi_sdist"]], check=True)
        archive = next(Path(tmp).glob("*.tar.gz"))
        with tarfile.open(archive) as tf:
            target.write_bytes(tf.extractfile(mirror["member"]).read())


def fetch(name, dest):
    entry = manifest()[name]
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    target = dest / f"{name}.csv"
    if not target.exists():
        try:
            _from_url(entry["url"], target)
        except OSError as exc:
            if "mirror" not in entry:
                raise
            print(f"{entry['url']} unreachable ({exc}); using {entry['mirror']['pypi_sdist']}")
            _from_sdist(entry["mirror"], target)
    digest = hashlib.sha256(target.read_bytes()).hexdigest()
    if entry.get("sha256") and digest != entry["sha256"]:
        target.unlink()
        raise SystemExit(f"{name}: checksum mismatch ({digest})")
    return target


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="+")
    ap.add_argument("--dest", default="data")
    args = ap.parse_args()
    for name in args.names:
        print(fetch(name, args.dest))


if __name__ == "__main__":
    main()
