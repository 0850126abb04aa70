"""ProtoNet logits, the equivalent linear head and its normalized variant."""
# %%
import numpy as np

from metalearn.episodes import LabeledBatch
from metalearn.meta_algorithms import initial_logits, protomaml_episode_init, protonet_logits
from metalearn.models import EncoderConfig, classify, encode, init_params

rng = np.random.default_rng(0)
cfg = EncoderConfig(input_dim=10, hidden_dims=(16,), output_dim=8, n_classes=3, inner_steps=1)
theta = init_params(cfg, rng)
y = np.repeat(np.arange(3), 4)
support = LabeledBatch(tuple(map(str, range(12))), rng.normal(size=(12, 10)) + y[:, None], y)
query_x = rng.normal(size=(5, 10))

# %% [markdown]
# A head with rows `2 mu_c` and biases `-|mu_c|^2` differs from the negative
# squared distance only by `-|x|^2`, which softmax ignores.

# %%
head = protomaml_episode_init(theta, support, normalize=False, order="first")
emb = encode(theta, query_x, 0)
a = classify(head, emb).data
b = protonet_logits(emb, encode(theta, support.x, 0), support.y, use_simpleshot=False).data
p = lambda z: np.exp(z - z.max(1, keepdims=True)) / np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)
print("max softmax difference:", np.abs(p(a) - p(b)).max())

# %% [markdown]
# Normalizing the prototypes pins every bias at -1 and bounds the logits.

# %%
head_n = protomaml_episode_init(theta, support, normalize=True, order="first")
print("normalized biases:", head_n["head.b"].data)
print("plain logit range:", np.ptp(initial_logits(theta, support, query_x, normalize=False)).round(3))
print("normalized logit range:", np.ptp(initial_logits(theta, support, query_x, True, True)).round(3))
