"""Independent reference computations used as test oracles.

Everything here is written with explicit Python loops over scalars and
short vectors, deliberately sharing no code paths with the vectorized
library implementation beyond the parameter container.
"""

import math

import numpy as np

from rlhflab.kernels import ParamVector
from rlhflab.policy import PolicyArch, Vocabulary, init_policy


def tiny_arch(vocab=5, prompt_len=2, window=2, embed_dim=3, hidden=(4,), max_len=4):
    return PolicyArch(Vocabulary(vocab, 0), prompt_len, window, embed_dim, hidden, max_len)


def tiny_policy(seed, output_scale=1.0, **kw):
    from rlhflab.seeding import stream
    return init_policy(tiny_arch(**kw), stream(seed, "test-policy"), output_scale)


def random_response(rng, arch, min_len=1):
    n = int(rng.integers(min_len, arch.max_response_len + 1))
    body = [int(t) for t in rng.integers(1, arch.vocab.size, size=n - 1)]
    return tuple(body) + (arch.vocab.terminator_token,)


def random_prompt(rng, arch):
    return tuple(int(t) for t in rng.integers(1, arch.vocab.size, size=arch.prompt_len))


def fd_grad(f, values, h=1e-4):
    """Central finite differences of scalar ``f(values)`` for every coordinate."""
    values = np.array(values, dtype=np.float64)
    g = np.zeros_like(values)
    for i in range(values.size):
        old = values[i]
        values[i] = old + h
        up = f(values)
        values[i] = old - h
        down = f(values)
        values[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    bad = np.abs(analytic - numeric) > rtol * np.abs(numeric) + atol
    assert not bad.any(), (
        f"{bad.sum()} coordinates differ; worst {np.max(np.abs(analytic - numeric)):.3g}")


# ----------------------------------------------------------------------
# Straight-line network evaluation


def straight_mlp(spec, params: ParamVector, x):
    """Layer-by-layer scalar loops."""
    act = [float(v) for v in x]
    for layer in range(spec.num_layers):
        w = params[f"W{layer}"]
        b = params[f"b{layer}"]
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += act[i] * float(w[i, j])
            last = layer == spec.num_layers - 1
            out.append(math.tanh(s) if (not last or spec.activate_output) else s)
        act = out
    return np.array(act)


def _context_vector(arch, trunk, prompt, prefix):
    pad = arch.vocab.size
    p = list(prompt) + [pad] * (arch.prompt_len - len(prompt))
    w = [pad] * arch.window + list(prefix)
    w = w[len(w) - arch.window:]
    pos = len(prefix)
    parts = [trunk["embed"][t] for t in p] + [trunk["embed"][t] for t in w] + [trunk["pos"][pos]]
    return np.concatenate(parts)


def straight_embedding(arch, trunk, prompt, prefix):
    mlp = ParamVector.from_segments({k[4:]: trunk[k] for k in trunk.layout if k.startswith("mlp.")})
    return straight_mlp(arch.trunk_spec, mlp, _context_vector(arch, trunk, prompt, prefix))


def straight_next_dist(policy, prompt, prefix):
    arch = policy.arch
    trunk = policy.params.subset("backbone")
    out = policy.params.subset("out")
    logits = straight_mlp(arch.out_spec, out, straight_embedding(arch, trunk, prompt, prefix))
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    z = sum(e)
    return np.array([v / z for v in e])


def straight_logprob(policy, prompt, response):
    total = 0.0
    for step, tok in enumerate(response):
        total += math.log(straight_next_dist(policy, prompt, response[:step])[tok])
    return total


def straight_token_probs(policy, prompt, response):
    return [straight_next_dist(policy, prompt, response[:s])[t] for s, t in enumerate(response)]


def straight_reward(rm, prompt, response):
    """Mean over tokens of the trunk embedding just after each token, then the head."""
    arch = rm.arch
    trunk = rm.params.subset("backbone")
    embs = [straight_embedding(arch, trunk, prompt, response[:s + 1]) for s in range(len(response))]
    pooled = np.sum(embs, axis=0) / len(embs)
    return float(straight_mlp(rm.head, rm.params.subset("head"), pooled)[0])


def straight_pooled(rm, prompt, response):
    arch = rm.arch
    trunk = rm.params.subset("backbone")
    embs = [straight_embedding(arch, trunk, prompt, response[:s + 1]) for s in range(len(response))]
    return np.sum(embs, axis=0) / len(embs)


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def brute_force_infomax(particle_rewards):
    """Scan every pair with a two-pass population variance; first strict max wins."""
    n, m = particle_rewards.shape
    best, best_pair = -1.0, None
    for i in range(m):
        for j in range(i + 1, m):
            probs = [logistic(particle_rewards[z, i] - particle_rewards[z, j]) for z in range(n)]
            mean = sum(probs) / n
            var = sum((q - mean) ** 2 for q in probs) / n
            if var > best + 1e-15:
                best, best_pair = var, (i, j)
    return best_pair, best
