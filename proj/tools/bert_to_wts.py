# SPDX-License-Identifier: Apache-2.0
"""Convert a Hugging Face BERT-style encoder checkpoint to the WTS format.

Usage:
    python tools/bert_to_wts.py bert-base-uncased bert_base.wts
    TSLIM_BERT_WTS=bert_base.wts ./build/tests/tslim_acceptance

The WTS payload holds 12 D x D blocks per layer in the order
[Q, K, V, O, In_1..In_4, Out_1..Out_4], where In_h are the D-column blocks of
the FFN input matrix and Out_h the D-row blocks of the FFN output matrix
stored transposed. torch Linear layers keep (out, in) weights and compute
x @ W.T, so every block below is the stored weight transposed.
"""

import struct
import sys

import numpy as np


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 1
    model_name, out_path = sys.argv[1], sys.argv[2]

    from transformers import AutoModel

    model = AutoModel.from_pretrained(model_name)
    layers = model.encoder.layer
    hidden = model.config.hidden_size
    n_layers = len(layers)

    slices = []
    for layer in layers:
        att = layer.attention
        wq = att.self.query.weight.detach().numpy().T
        wk = att.self.key.weight.detach().numpy().T
        wv = att.self.value.weight.detach().numpy().T
        wo = att.output.dense.weight.detach().numpy().T
        w_in = layer.intermediate.dense.weight.detach().numpy().T   # D x 4D
        w_out = layer.output.dense.weight.detach().numpy().T        # 4D x D
        slices.extend([wq, wk, wv, wo])
        for h in range(4):
            slices.append(w_in[:, h * hidden:(h + 1) * hidden])
        for h in range(4):
            slices.append(w_out[h * hidden:(h + 1) * hidden, :].T)

    with open(out_path, "wb") as f:
        f.write(b"WTS1")
        f.write(struct.pack("<II", n_layers, hidden))
        f.write(bytes([1, 0, 0, 0]))
        for s in slices:
            f.write(np.ascontiguousarray(s, dtype="<f8").tobytes())
    print(f"wrote {out_path} (L={n_layers}, D={hidden})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
