"""
Ablations and the attention census
==================================

Trains the full model and the five single-component ablations with the
same seed and budget, then counts which modality each surviving Top-U
entry comes from.
"""

from gsabt.data import SynthConfig, SynthModality, synth_generate, week_splits
from gsabt.experiments import (ablation_ordering, attention_census, model_config_for, prepare, run_ablation_suite,
                               synth_specs)
from gsabt.training import TrainConfig

sc = SynthConfig([SynthModality("taxi", 6, 100.0), SynthModality("bike", 4, 10.0)], days=21, seed=0)
bounds = week_splits(sc.days * sc.steps_per_day, weeks=(1, 1, 1), steps_per_day=sc.steps_per_day)
prep = prepare(synth_specs(sc), synth_generate(sc), 12, 12, bounds)
cfg = model_config_for(prep, P=12, Q=12, d_h=8, d_f=4, top_u=4)
tcfg = TrainConfig(epochs=1, learning_rate=1e-3)

kept = {}
rows = run_ablation_suite(cfg, prep, tcfg, keep=kept)
for variant, rep in rows:
    print(f"{variant:9s} overall MAE {rep['overall'].mae:.4f}")
print("\n".join(ablation_ordering(rows, prep.names)))

census = attention_census(kept["full"][0], prep.dataset, "test", prep.graph)
props = census.proportions()
for i, target in enumerate(census.names):
    parts = ", ".join(f"{s} {props[i, j]:.1f}%" for j, s in enumerate(census.names))
    print(f"{target} attends to: {parts}")
