"""
Training the tiny network on phantoms
=====================================

A short run of the scaled benchmark. The full acceptance run uses 2000
iterations; pass a number on the command line to change it.
"""

import sys

import numpy as np

from iterseg.benchmark import SCALED_NETWORK, run_scaled_benchmark, scaled_datasets
from iterseg.network import TinyFCN

n_iter = int(sys.argv[1]) if len(sys.argv) > 1 else 300

train_set, test_set = scaled_datasets()
image, mask = train_set[0]
print("training phantoms", len(train_set), "held out", len(test_set), "dims", image.dims)
print("labels of the first one", [mask.records[i].label for i in mask.instance_ids()])
print("parameters", TinyFCN(SCALED_NETWORK).n_parameters())

#%% train and evaluate
log = []


def progress(record):
    log.append(record)
    if record.iteration % 50 == 49:
        recent = log[-50:]
        print(f"{record.iteration + 1:5d} lambda={record.lam:.3f} "
              f"fp={np.mean([r.fp_soft for r in recent]):8.1f} "
              f"fn={np.mean([r.fn_soft for r in recent]):7.1f} "
              f"label={np.mean([r.label_loss for r in recent]):.2f}")


result = run_scaled_benchmark(n_iter, progress=progress)
print(result)

#%% per-scan view
for report in result.reports:
    row = [(i.label, i.predicted_label, None if i.dice is None else round(i.dice, 2))
           for i in report.instances]
    print(report.scan, row)
