import pytest

from sortforge.fixtures import write_capture_set


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("captures")
    write_capture_set(root, 12, seed=0)
    return root


@pytest.fixture(scope="session")
def fixture_manifest(fixture_dir):
    return fixture_dir / "manifest.json"
