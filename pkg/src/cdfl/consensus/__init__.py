"""Dynamic committee BFT consensus over a simulated partially synchronous
network."""

from .checks import check_liveness, check_safety, views_per_height
from .committee import (
    Committee,
    elect_leader,
    quantize_weights,
    round_randomness,
    select_committee,
    verify_committee,
)
from .engine import BEHAVIORS, Block, Engine, GENESIS_HASH
from .network import NetworkModel, SimNetwork

__all__ = [
    "BEHAVIORS",
    "Block",
    "Committee",
    "Engine",
    "GENESIS_HASH",
    "NetworkModel",
    "SimNetwork",
    "check_liveness",
    "check_safety",
    "elect_leader",
    "quantize_weights",
    "round_randomness",
    "run_consensus",
    "select_committee",
    "verify_committee",
    "views_per_height",
]


def run_consensus(
    candidates,
    byzantine_behaviors,
    network_model,
    hub,
    epochs: int = 2,
    epoch_length: int = 10,
    committee_size: int | None = None,
    tx_batches=None,
    block_time: int = 1,
    rotate_committee: bool = True,
    max_ticks: int = 200_000,
    trace_sends: bool = False,
):
    """Run a fixed number of epochs and return (trace, engine)."""
    engine = Engine(
        candidates=candidates,
        behaviors=byzantine_behaviors,
        network_model=network_model,
        hub=hub,
        committee_size=committee_size,
        epoch_length=epoch_length,
        block_time=block_time,
        rotate_committee=rotate_committee,
        height_limit=epochs * epoch_length,
        trace_sends=trace_sends,
    )
    if tx_batches:
        for batch in tx_batches:
            engine.submit_txs(batch)
    trace = engine.run(max_ticks=max_ticks)
    return trace, engine
