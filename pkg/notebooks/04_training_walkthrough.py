"""
End-to-end training on the synthetic image+text task
====================================================

The generator plants a pattern in the image and a keyword in the sentence.
At 0.5/0.5 informativeness each modality identifies only half the classes,
so unimodal lookup rules cap at 75% while the pair resolves everything:
exactly the regime where fusion should win.
"""

import numpy as np

from mmfusion.data import SyntheticSpec, generate
from mmfusion.decision import BRANCHES
from mmfusion.model import (EncoderConfig, MultimodalClassifier, RunConfig,
                            TrainerSettings)
from mmfusion.train import evaluate_metrics, train_model

# 1. Generate and inspect the self-check: the construction is certified
#    before any training happens.
spec = SyntheticSpec(n_classes=4, samples_per_class=40, image_size=16,
                     patch_size=4, vocab_size=32, noise_level=0.05, seed=0)
ds = generate(spec)
print("self-check:", ds.self_check)
print("splits:", {name: len(ds.split(name)) for name in ("train", "val", "test")})

# 2. A small run configuration. The grouped full-scale learning rates are
#    kept as package defaults; desk-scale runs train everything at 1e-3.
cfg = RunConfig(
    text_encoder=EncoderConfig(d_model=32, n_heads=2, n_layers=1, ffn_width=64,
                               embedding_dim=16, share_layers=True, max_len=16),
    image_encoder=EncoderConfig(d_model=32, n_heads=2, n_layers=1, ffn_width=64,
                                embedding_dim=32, share_layers=False, max_len=32),
    trainer=TrainerSettings(epochs=15, batch_size=8, lr_text=1e-3, lr_image=1e-3,
                            lr_other=1e-3, weight_decay=5e-4),
    data=spec, seed=0)
model = MultimodalClassifier(cfg, vocab_size=len(ds.vocab))

# 3. Train; the history carries the three branch losses and the composite.
history = train_model(model, ds)
for epoch in (0, 4, 9, 14):
    b = history[epoch]
    print(f"epoch {epoch:2d}: text {b.loss_text:.3f} interaction "
          f"{b.loss_interaction:.3f} image {b.loss_image:.3f} total {b.total:.3f}")

# 4. Evaluate with the confidence-weighted vote.
report = evaluate_metrics(model, ds.split("test"), len(ds.vocab), spec.n_classes)
print("test accuracy:", round(report.accuracy, 3),
      "macro F1:", round(report.macro_f1, 3))
print("confusion:\n", report.confusion)

# 5. Peek at the vote: branch distributions and the fused result for one batch.
batch = ds.split("test")[:4]
tb, ib = model.batches_for(batch, len(ds.vocab))
preds = model.forward_batch(tb, ib)
fused, weights = model.predict_probs(preds)
print("vote weights:", {b: round(w, 3) for b, w in weights.weights.items()})
for b in BRANCHES:
    print(f"  {b:12s} argmax:", preds[b].probs.data.argmax(axis=1))
print("  fused        argmax:", fused.argmax(axis=1),
      "labels:", [s.label for s in batch])
