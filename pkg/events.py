"""
Progress Events

Synchronous pub-sub bus used by ingestion, the walk-forward sweep and the betting
simulator to report progress. Delivery happens in the publishing thread, in
priority order, so runs stay deterministic; a failing subscriber is logged and
never interrupts the publisher.
"""

import fnmatch
import itertools
import threading
import logging
from typing import Dict, List, Callable, Any, Optional
from dataclasses import dataclass, field
from enum import Enum


class EventPriority(Enum):
    LOW = 1
    NORMAL = 2
    HIGH = 3


@dataclass
class Event:
    """One published event; sequence orders events within a bus"""
    name: str
    data: Dict[str, Any]
    source: str
    sequence: int = 0
    tags: Dict[str, str] = field(default_factory=dict)


class EventBus:
    """
    Event bus with wildcard subscriptions and bounded history.

    Patterns use shell-style wildcards, so `walkforward.*` receives
    `walkforward.snapshot` and `walkforward.completed`.
    """

    def __init__(self, max_history: int = 1000):
        self._subscribers: Dict[str, List[Dict[str, Any]]] = {}
        self._lock = threading.RLock()
        self._event_history: List[Event] = []
        self._max_history = max_history
        self._sequence = itertools.count(1)
        self._ids = itertools.count(1)

    def subscribe(self, event_name: str, callback: Callable[[Event], None],
                  priority: EventPriority = EventPriority.NORMAL,
                  filter_func: Optional[Callable[[Event], bool]] = None) -> str:
        """
        Subscribe to an event.

        Args:
            event_name: Event name or wildcard pattern
            callback: Called with the Event
            priority: Higher priorities are called first
            filter_func: Optional predicate; the callback runs only when it returns True

        Returns:
            Subscription ID for unsubscribing
        """
        with self._lock:
            subscription_id = f"sub-{next(self._ids)}"
            self._subscribers.setdefault(event_name, []).append({
                'id': subscription_id,
                'callback': callback,
                'priority': priority,
                'filter_func': filter_func
            })
            self._subscribers[event_name].sort(key=lambda x: x['priority'].value, reverse=True)

        logging.debug(f"Subscribed to event '{event_name}' with ID {subscription_id}")
        return subscription_id

    def unsubscribe(self, subscription_id: str) -> bool:
        with self._lock:
            for event_name, subscribers in self._subscribers.items():
                for subscriber in subscribers[:]:
                    if subscriber['id'] == subscription_id:
                        subscribers.remove(subscriber)
                        logging.debug(f"Unsubscribed from event '{event_name}' with ID {subscription_id}")
                        return True
        return False

    def publish_event(self, name: str, data: Dict[str, Any], source: str,
                      tags: Optional[Dict[str, str]] = None) -> Event:
        """Build, record and deliver an event; returns it"""
        with self._lock:
            event = Event(name=name, data=data, source=source,
                          sequence=next(self._sequence), tags=dict(tags or {}))
            self._event_history.append(event)
            if len(self._event_history) > self._max_history:
                self._event_history.pop(0)

            matching = []
            for pattern, subscribers in self._subscribers.items():
                if self._matches_pattern(event.name, pattern):
                    matching.extend(subscribers)
            matching.sort(key=lambda x: x['priority'].value, reverse=True)

        for subscriber in matching:
            try:
                if subscriber['filter_func'] and not subscriber['filter_func'](event):
                    continue
                subscriber['callback'](event)
            except Exception as e:
                logging.error(f"Event callback failed for '{event.name}': {e}")

        logging.debug(f"Published event '{event.name}' from '{event.source}'")
        return event

    @staticmethod
    def _matches_pattern(event_name: str, pattern: str) -> bool:
        if '*' not in pattern:
            return event_name == pattern
        return fnmatch.fnmatch(event_name, pattern)

    def get_event_history(self, event_name: Optional[str] = None, limit: int = 100) -> List[Event]:
        with self._lock:
            history = self._event_history
            if event_name:
                history = [e for e in history if self._matches_pattern(e.name, event_name)]
            return list(history[-limit:])

    def clear_history(self) -> None:
        with self._lock:
            self._event_history.clear()

    def get_subscriber_count(self, event_name: Optional[str] = None) -> int:
        with self._lock:
            if event_name:
                return len(self._subscribers.get(event_name, []))
            return sum(len(subs) for subs in self._subscribers.values())


# Bus used when a caller does not pass its own
event_bus = EventBus()


def subscribe(event_name: str, callback: Callable[[Event], None],
              priority: EventPriority = EventPriority.NORMAL,
              filter_func: Optional[Callable[[Event], bool]] = None) -> str:
    return event_bus.subscribe(event_name, callback, priority, filter_func)


def unsubscribe(subscription_id: str) -> bool:
    return event_bus.unsubscribe(subscription_id)


def publish_event(name: str, data: Dict[str, Any], source: str,
                  tags: Optional[Dict[str, str]] = None) -> Event:
    return event_bus.publish_event(name, data, source, tags)
