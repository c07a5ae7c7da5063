"""What each cross-attention mechanism does with the same keys and queries.

Uniform attention ignores the query.  Laplace attention puts weight on nearby
keys, while raw dot-product attention favours keys pointing the same way as
the query (which is why the models feed it learned key embeddings rather
than raw x).  Multihead attention learns its own similarity through
projections, random here.
"""

import numpy as np

from anp import autodiff as ad
from anp.attention import AttentionKind, attention_weights, init_multihead

keys = ad.Tensor(np.array([[-1.5], [-0.5], [0.0], [0.5], [1.5]]))
queries = ad.Tensor(np.array([[-1.4], [0.1], [1.2]]))
params = init_multihead(np.random.default_rng(0), "mh", 1, 8, 8, 4)

np.set_printoptions(precision=3, suppress=True)
for kind in (AttentionKind("uniform"), AttentionKind("laplace"), AttentionKind("dot_product")):
    print(kind.name)
    print(attention_weights(kind, params, "mh", queries, keys))
    print()

# multihead weights come out per head: [heads, queries, keys]
w = attention_weights(AttentionKind.multihead(4), params, "mh", queries, keys)
print("multihead, head 0")
print(w[0])
print("every row sums to one:", np.allclose(w.sum(axis=-1), 1.0))
