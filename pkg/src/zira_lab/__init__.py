"""zira_lab: reparameterizable dual branches and a zero-interference loss on a toy detector."""
from .errors import ZiraError
from .evalkit import RunRecord, hap
from .rdb import BranchParams, Rdb, consolidate_with_pretrained, merge_hlrb_into_llrb, rdb_forward, reset_hlrb
from .zil import ZilConfig, loss_hlrb, loss_rdb, total_loss

__version__ = "0.1.0"

__all__ = [
    "ZiraError", "RunRecord", "hap", "BranchParams", "Rdb", "rdb_forward", "reset_hlrb",
    "merge_hlrb_into_llrb", "consolidate_with_pretrained", "ZilConfig", "loss_rdb", "loss_hlrb", "total_loss",
]
