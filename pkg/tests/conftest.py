import pytest

from axialfuse.volume_io import SynthSpec, synth_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 classes, 8^3 volumes, 3/1/1 per class. Returns the manifest path."""
    root = tmp_path_factory.mktemp("tiny")
    synth_dataset(SynthSpec((3, 1, 1), 2, 8, 11), root)
    return root / "manifest.tsv"
