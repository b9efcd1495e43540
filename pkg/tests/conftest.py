import pytest

from flitext import autodiff as ad


@pytest.fixture(autouse=True)
def clean_engine_state():
    """Tests may record forwards they never backward; keep tapes independent."""
    ad.current_graph().nodes.clear()
    ad.set_default_dtype("float32")
    yield
    ad.current_graph().nodes.clear()
    ad.set_default_dtype("float32")
