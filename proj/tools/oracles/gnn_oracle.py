"""Independent numpy traces for the frozen message-passing cases in test_gnn.cpp."""
import numpy as np

relu = lambda x: np.maximum(x, 0.0)


def ln(x, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=1, keepdims=True) + eps)

fmt = lambda m: "\n".join(" ".join(f"{x:.17g}" for x in row) for row in np.atleast_2d(m))


def upd(d, layer):
    return np.array([[np.sin(0.4 * i - 0.3 * j + 0.2 * layer + 0.1) for j in range(d)] for i in range(2 * d)])


# relation level, no edges: |R|=3, d=3, two layers, query relation 1
h = np.zeros((3, 3)); h[1] = 1.0
for layer in range(2):
    h = relu(ln(np.concatenate([h, np.zeros_like(h)], axis=1) @ upd(3, layer)))
print("relation_no_edges"); print(fmt(h))

# relation level, d=2, one layer, W = [diag(1, 0.5); I], single t2h edge 0 -> 1, query 0
fund = np.array([[0.5 * (i + 1) * (1 if j == 0 else -1) for j in range(2)] for i in range(4)])
h = np.zeros((2, 2)); h[0] = 1.0
agg = np.zeros((2, 2)); agg[1] = h[0] * fund[2]
h = relu(ln(np.concatenate([h, agg], axis=1) @ np.array([[1, 0], [0, 0.5], [1, 0], [0, 1]])))
print("relation_t2h"); print(fmt(h))

# per-layer relation transform
rq = np.array([[np.cos(i + 2 * j) for j in range(2)] for i in range(3)])
w1 = np.array([[np.sin(i - j + 0.5) for j in range(2)] for i in range(2)])
w2 = np.array([[np.cos(0.3 * i + j) for j in range(2)] for i in range(2)])
out = relu(rq @ w1 + np.array([0.3, 0.2])) @ w2 + np.array([0.05, 0.0])
print("transform"); print(fmt(out))

# entity level, no edges: |E|=3, d=2, two layers, query (head 2, relation 0)
rq = np.array([[0.7, 0.4], [0.2, 0.9]])
fused = np.array([[0.3 * (i + 1) - 0.2 * j for j in range(2)] for i in range(3)])
h = np.zeros((3, 2)); h[2] = rq[0]; h = h + fused
for layer in range(2):
    h = relu(ln(np.concatenate([h, np.zeros_like(h)], axis=1) @ upd(2, layer)))
print("entity_no_edges"); print(fmt(h))
