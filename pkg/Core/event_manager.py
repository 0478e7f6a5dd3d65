# Core/event_manager.py

import threading
from collections import defaultdict
from contextlib import contextmanager
from typing import Callable, Dict, Optional

from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

logger = get_logger()

# ─── Topics ───
TRAIN_STEP = "train/step"
TRAIN_EPOCH = "train/epoch"
TRAIN_COMPLETE = "train/complete"
EVAL_COMPLETE = "eval/complete"

# Keys every payload of a topic carries; extra keys are allowed.
TOPIC_FIELDS = {
    TRAIN_STEP: ("step", "epoch", "loss", "components", "lr"),
    TRAIN_EPOCH: ("epoch", "mean_loss", "mean_ce", "steps"),
    TRAIN_COMPLETE: ("steps", "final_loss", "checkpoint"),
    EVAL_COMPLETE: ("label", "report"),
}

Callback = Callable[[Optional[Dict]], None]


class EventManager:
    """
    In-process pub/sub between the training / evaluation loops and whatever
    records their progress (metric streams, tests). Singleton.
    """
    _instance = None

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            cls._instance = EventManager()
        return cls._instance

    def __init__(self):
        if EventManager._instance is not None:
            raise Exception("EventManager already exists! Use EventManager.get_instance() to get the singleton instance.")
        self._listeners = defaultdict(list)
        self._lock = threading.Lock()
        EventManager._instance = self

    def subscribe(self, topic: str, callback: Callback):
        with self._lock:
            self._listeners[topic].append(callback)
        logger.debug_at_level(DEBUG_L2, "EventManager", f"+1 subscriber on '{topic}'")

    def unsubscribe(self, topic: str, callback: Callback):
        with self._lock:
            callbacks = self._listeners.get(topic, [])
            if callback not in callbacks:
                logger.warning("EventManager", f"No such subscriber on '{topic}'")
                return
            callbacks.remove(callback)
        logger.debug_at_level(DEBUG_L2, "EventManager", f"-1 subscriber on '{topic}'")

    @contextmanager
    def subscribed(self, callbacks: Dict[str, Callback]):
        """Subscribe topic -> callback pairs for the duration of a with-block."""
        for topic, callback in callbacks.items():
            self.subscribe(topic, callback)
        try:
            yield self
        finally:
            for topic, callback in callbacks.items():
                self.unsubscribe(topic, callback)

    def subscriber_count(self, topic: str) -> int:
        with self._lock:
            return len(self._listeners.get(topic, []))

    def publish(self, topic: str, data: Optional[Dict] = None):
        """
        Deliver data to every subscriber of topic. Payloads missing one of the
        topic's TOPIC_FIELDS are still delivered but logged. A subscriber that
        raises is logged and skipped.
        """
        missing = [k for k in TOPIC_FIELDS.get(topic, ()) if k not in (data or {})]
        if missing:
            logger.warning("EventManager", f"'{topic}' payload lacks {missing}")
        with self._lock:
            callbacks = list(self._listeners.get(topic, []))
        if topic != TRAIN_STEP:
            logger.debug_at_level(DEBUG_L3, "EventManager", f"'{topic}' -> {len(callbacks)} subscribers")
        for callback in callbacks:
            try:
                callback(data)
            except Exception as e:
                logger.error("EventManager", f"Subscriber of '{topic}' failed: {type(e).__name__}: {e}")

    def unsubscribe_all(self):
        with self._lock:
            self._listeners.clear()
        logger.debug_at_level(DEBUG_L2, "EventManager", "Cleared all subscriptions")
