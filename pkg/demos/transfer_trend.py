"""Zero-shot transfer to two unseen scripts for every system, averaged over seeds.

Pass a seed count as the first argument (default 5). Each seed takes about 3 minutes.
"""

import sys

from madx.experiment import ExperimentConfig, transfer_trend

cfg = ExperimentConfig()
result = transfer_trend(cfg, seeds=tuple(range(int(sys.argv[1]) if len(sys.argv) > 1 else 5)))
print(result.table())
for name, (ok, msg) in result.checks(cfg.unseen_ids).items():
    print(f"{name}: {'holds' if ok else 'fails'}  {msg}")
