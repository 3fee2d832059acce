"""Train a small ReLU MLP on scikit-learn's 8x8 digits and export it.

Writes the graph JSON and the held-out split (CSV: 64 pixel columns scaled to
[0, 1], then the label) used by the end-to-end equivalence test.

    python python/make_digits_fixture.py crates/core/tests/fixtures
"""

import csv
import json
import sys
from pathlib import Path

from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier


def graph_json(mlp, input_dim):
    nodes = [{"id": 0, "kind": "input", "dim": input_dim, "inputs": []}]
    prev = 0
    layers = list(zip(mlp.coefs_, mlp.intercepts_))
    for n, (w, b) in enumerate(layers):
        dense = len(nodes)
        nodes.append({
            "id": dense,
            "kind": "dense",
            # sklearn stores (in, out); graphs use rows = outputs
            "weight": w.T.tolist(),
            "bias": b.tolist(),
            "inputs": [prev],
        })
        prev = dense
        if n + 1 < len(layers):
            act = len(nodes)
            nodes.append({"id": act, "kind": "activation", "activation": "relu", "inputs": [prev]})
            prev = act
    out = len(nodes)
    nodes.append({"id": out, "kind": "output", "inputs": [prev]})
    return {"input_dim": input_dim, "output_id": out, "nodes": nodes}


def main(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    x = digits.data / 16.0
    x_train, x_test, y_train, y_test = train_test_split(
        x, digits.target, test_size=0.25, random_state=0, stratify=digits.target
    )
    mlp = MLPClassifier(hidden_layer_sizes=(32, 32), activation="relu", max_iter=800, random_state=0)
    mlp.fit(x_train, y_train)
    print(f"train accuracy {mlp.score(x_train, y_train):.4f}, test accuracy {mlp.score(x_test, y_test):.4f}")

    (out_dir / "digits_mlp.json").write_text(json.dumps(graph_json(mlp, x.shape[1]), indent=1))
    with open(out_dir / "digits_test.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"p{i}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x_test, y_test):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures")
