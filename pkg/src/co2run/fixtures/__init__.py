"""Bundled example systems and contract files.

The store scenario (one seller, two buyers, and the single buyer who
impersonates both), the permission-checked do example, the pool whose fuse
must pick a compliant subset, the stuck and robust two-session systems,
the dishonest-by-omission notification example, a recursive ping-pong pair,
and a mid-execution snapshot of the store session.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

FIXTURES = (
    "store_s1.co2",
    "store_s2.co2",
    "store_s12.co2",
    "do_int_bool.co2",
    "subset_fuse.co2",
    "stuck_pair.co2",
    "robust_pair.co2",
    "group_honesty.co2",
    "pingpong.co2",
    "store_s1pp.co2",
)

CONTRACT_FILES = ("store_trio.ctr", "store_pair.ctr")


def fixture_path(name: str) -> Path:
    path = resources.files(__package__) / name
    with resources.as_file(path) as p:
        return Path(p)


def fixture_text(name: str) -> str:
    return (resources.files(__package__) / name).read_text()
