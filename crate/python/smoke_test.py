"""Smoke test for the a2w_py extension.

Builds the extension with cargo (unless A2W_PY_LIB points at a built
library), copies it next to this script as an importable module and
exercises the main entry points.
"""

import itertools
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_module(dest: Path) -> None:
    lib = os.environ.get("A2W_PY_LIB")
    if lib is None:
        subprocess.run(["cargo", "build", "--release", "-p", "a2w-py"], cwd=ROOT, check=True)
        target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
        names = ["liba2w_py.so", "liba2w_py.dylib", "a2w_py.dll"]
        lib = next(str(target / "release" / n) for n in names if (target / "release" / n).exists())
    suffix = ".pyd" if lib.endswith(".dll") else ".so"
    shutil.copy(lib, dest / f"a2w_py{suffix}")


def main() -> int:
    work = Path(tempfile.mkdtemp(prefix="a2w_smoke_"))
    try:
        build_module(work)
        sys.path.insert(0, str(work))
        import a2w_py as a2w

        assert a2w.collapse([0, 0, 2, 1, 1, 2, 0], 2) == [0, 1, 0]

        lp = a2w.log_softmax([[0.3, -1.0, 0.2], [1.5, 0.1, -0.4], [0.0, 0.0, 0.0]])
        targets = [list(y) for n in range(4) for y in itertools.product(range(2), repeat=n)]
        total = sum(math.exp(a2w.ctc_log_likelihood(lp, y)) for y in targets)
        assert abs(total - 1.0) < 1e-9, total

        brute = sum(math.exp(sum(lp[t][s] for t, s in enumerate(p)))
                    for p in a2w.enumerate_preimage([0, 1], 3, 2))
        assert abs(brute - math.exp(a2w.ctc_log_likelihood(lp, [0, 1]))) < 1e-12

        loss, grad = a2w.ctc_loss_and_gradient(lp, [0])
        assert loss > 0 and len(grad) == 3 and all(abs(sum(r)) < 1e-12 for r in grad)
        assert a2w.greedy_decode(lp) == [0]

        assert a2w.edit_distance(["a", "b", "c"], ["a", "x", "c", "d"]) == (1, 0, 1)
        assert abs(a2w.error_rate(["a", "b"], ["a"]) - 50.0) < 1e-12

        data = work / "data"
        sizes = a2w.synthesize(str(data), vocab_size="30", train_size="4", dev_size="2", test_size="1")
        assert sizes == (4, 2, 1)
        words = [line.split("\t")[0] for line in (data / "lexicon.tsv").read_text().splitlines()]
        assert 0.0 <= a2w.pronunciation_overlap(words[0], words[1], str(data / "lexicon.tsv")) <= 1.0

        net = a2w.Network(words, 16, hidden=8, layers=2, downsample=2, seed=3)
        feats = [[0.01 * (t + j) for j in range(16)] for t in range(20)]
        out = net.forward(feats)
        assert len(out) == net.output_frames(20) == 10
        assert all(abs(sum(math.exp(v) for v in row) - 1.0) < 1e-9 for row in out)
        assert isinstance(net.decode(feats), list)
        assert math.isfinite(net.loss(feats, words[:2]))
        near = net.neighbors(words[0], 3)
        assert len(near) == 3 and near[0][1] <= near[2][1]
        assert abs(net.margin(words[0]) - near[0][1]) < 1e-15

        path = work / "net.a2w"
        net.save(str(path))
        again = a2w.Network.load(str(path))
        assert again.forward(feats) == out and again.kind == "word-ctc"

        try:
            a2w.Network.load(str(data / "lexicon.tsv"))
        except ValueError:
            pass
        else:
            raise AssertionError("loading a non-model should fail")

        print("a2w_py smoke test passed")
        return 0
    finally:
        shutil.rmtree(work, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
