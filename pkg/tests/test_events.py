import pytest

from Core.event_manager import EVAL_COMPLETE, TRAIN_STEP, EventManager
from Utils.log_utils import DEBUG_L1, Logger, get_logger


def test_singletons():
    assert EventManager.get_instance() is EventManager.get_instance()
    with pytest.raises(Exception):
        EventManager()
    assert get_logger() is Logger.get_instance()
    with pytest.raises(Exception):
        Logger()


def test_subscribed_block_scopes_callbacks():
    events = EventManager.get_instance()
    seen = []
    with events.subscribed({EVAL_COMPLETE: seen.append}):
        assert events.subscriber_count(EVAL_COMPLETE) == 1
        events.publish(EVAL_COMPLETE, {"label": "a", "report": {}})
    events.publish(EVAL_COMPLETE, {"label": "b", "report": {}})
    assert [d["label"] for d in seen] == ["a"]
    assert events.subscriber_count(EVAL_COMPLETE) == 0


def test_subscribed_block_unsubscribes_on_error():
    events = EventManager.get_instance()
    with pytest.raises(RuntimeError):
        with events.subscribed({TRAIN_STEP: lambda data: None}):
            raise RuntimeError("boom")
    assert events.subscriber_count(TRAIN_STEP) == 0


def test_failing_subscriber_does_not_stop_delivery():
    events = EventManager.get_instance()
    seen = []

    def broken(data):
        raise ValueError("nope")

    events.subscribe(TRAIN_STEP, broken)
    events.subscribe(TRAIN_STEP, seen.append)
    events.publish(TRAIN_STEP, {"step": 1, "epoch": 1, "loss": 0.5, "components": {}, "lr": 1e-3})
    assert len(seen) == 1


def test_incomplete_payload_is_still_delivered():
    events = EventManager.get_instance()
    seen = []
    events.subscribe(EVAL_COMPLETE, seen.append)
    events.publish(EVAL_COMPLETE, {"label": "x"})
    events.publish(EVAL_COMPLETE)
    assert seen == [{"label": "x"}, None]


def test_unsubscribe_unknown_callback_is_harmless():
    events = EventManager.get_instance()
    events.unsubscribe("no/such/topic", print)
    assert events.subscriber_count("no/such/topic") == 0


def test_timed_block_propagates_errors():
    logger = get_logger()
    with logger.timed("Test", "quick"):
        pass
    with pytest.raises(KeyError):
        with logger.timed("Test", "failing", DEBUG_L1):
            raise KeyError("x")


def test_file_logging(tmp_path):
    logger = get_logger()
    previous = logger.log_directory
    logger.configure(verbose=True, log_directory=str(tmp_path), debug_level=2, colored_output=False)
    try:
        path = logger.configure_file_logging(enabled=True, filename="run.log")
        logger.log_mapping(2, "Test", "values", {"b": 2, "a": 1})
        logger.shutdown()
        with open(path, encoding="utf-8") as f:
            text = f.read()
        assert "[Test][L2]   a = 1" in text
        assert text.index("a = 1") < text.index("b = 2")
        assert "\033[" not in text
    finally:
        logger.configure(verbose=False, log_directory=previous)
