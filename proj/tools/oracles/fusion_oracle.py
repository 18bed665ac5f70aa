"""Independent numpy evaluation of the fusion MLP for the frozen test case in test_fusion.cpp."""
import numpy as np

text_dim, d, hidden = 4, 2, 3
w1 = np.array([[np.sin(0.3 * i + 0.7 * j + 0.1) for j in range(hidden)] for i in range(text_dim + d)])
b1 = np.array([0.05 * j - 0.1 for j in range(hidden)])
w2 = np.array([[np.cos(0.5 * i - 0.2 * j) for j in range(d)] for i in range(hidden)])
b2 = np.array([0.01 * (j + 1) for j in range(d)])
text = np.array([0.5, -1.0, 2.0, 0.25])
rel = np.array([1.0, -0.5])

h = np.maximum(np.concatenate([text, rel]) @ w1 + b1, 0.0)
out = h @ w2 + b2
print(" ".join(f"{x:.17g}" for x in out))
