import importlib.util

import pytest

from model_export import load_encoder

HAS_ONNX = importlib.util.find_spec("onnx") is not None
HAS_ONNXRUNTIME = importlib.util.find_spec("onnxruntime") is not None


@pytest.fixture(scope="session")
def encoder():
    return load_encoder("test-encoder", seed=0)


@pytest.fixture()
def tokenizer_dir(tmp_path, encoder):
    encoder.write_tokenizer_files(tmp_path)
    return tmp_path
