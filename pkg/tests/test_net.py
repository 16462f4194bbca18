import math
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinn import autodiff as ad
from pinn import net as nn
from pinn.autodiff import Graph
from pinn.net import MLPSpec, WeightStore, init_glorot, layout_for


def _u(spec, w, point):
    g = Graph()
    xs = [g.var(("x", i), float(v)) for i, v in enumerate(point)]
    return g, xs, nn.forward(spec, w, g, xs)


def test_glorot_bound_and_zero_bias():
    spec = MLPSpec.from_layers([2, 3, 1])
    w = init_glorot(spec, 11)
    (W1, b1), (W2, b2) = w.matrices()
    assert np.all(np.abs(W1) < math.sqrt(6 / 5))
    assert np.all(np.abs(W2) < math.sqrt(6 / 4))
    assert np.all(b1 == 0.0) and np.all(b2 == 0.0)


def test_glorot_deterministic():
    spec = MLPSpec.from_layers([2, 20, 20, 1])
    a, b = init_glorot(spec, 5), init_glorot(spec, 5)
    assert a.flat.tobytes() == b.flat.tobytes()
    assert init_glorot(spec, 6).flat.tobytes() != a.flat.tobytes()


def test_layout_covers_flat_exactly():
    spec = MLPSpec.from_layers([3, 7, 4, 1])
    blocks = [blk for pair in layout_for(spec) for blk in pair]
    covered = np.zeros(len(init_glorot(spec, 0)), dtype=int)
    for blk in blocks:
        covered[blk.offset:blk.offset + blk.size] += 1
    assert np.all(covered == 1)


def test_affine_identity():
    spec = MLPSpec.from_layers([1, 1])
    w = WeightStore(np.array([1.0, 0.0]), layout_for(spec))
    g, _, u = _u(spec, w, [4.0])
    assert g.eval(u) == 4.0


def test_zero_weights_give_zero():
    spec = MLPSpec.from_layers([2, 5, 5, 1])
    w = WeightStore(np.zeros(len(init_glorot(spec, 0))), layout_for(spec))
    for p in ([0.3, -2.0], [10.0, 1.0]):
        g, _, u = _u(spec, w, p)
        assert g.eval(u) == 0.0


def test_one_hidden_unit_tanh():
    spec = MLPSpec.from_layers([1, 1, 1])
    w = WeightStore(np.array([1.0, 0.0, 1.0, 0.0]), layout_for(spec))
    g, _, u = _u(spec, w, [0.5])
    assert abs(g.eval(u) - 0.46211715726000974) < 1e-15


def test_width_mismatch():
    spec = MLPSpec.from_layers([2, 3, 1])
    w = init_glorot(spec, 0)
    g = Graph()
    with pytest.raises(nn.WidthMismatchError):
        nn.forward(spec, w, g, [g.var("x", 1.0)])


def test_graph_and_numpy_forward_agree():
    spec = MLPSpec.from_layers([2, 8, 8, 1], "sin")
    w = init_glorot(spec, 2)
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    ref = nn.forward_numpy(spec, w, pts)
    for p, r in zip(pts, ref):
        g, _, u = _u(spec, w, p)
        assert abs(g.eval(u) - r) < 1e-14


small_nets = st.builds(
    lambda widths, act, seed: (MLPSpec.from_layers([2, *widths, 1], act), seed),
    st.lists(st.integers(1, 8), min_size=1, max_size=2),
    st.sampled_from(["tanh", "sin"]),
    st.integers(0, 2**31),
)


@settings(max_examples=25, deadline=None)
@given(small_nets, st.integers(0, 2**31))
def test_input_derivatives_match_fd(net, pseed):
    spec, seed = net
    w = init_glorot(spec, seed)
    rng = np.random.default_rng(pseed)
    h = 1e-5
    for p in rng.uniform(-1, 1, (50, 2)):
        g, xs, u = _u(spec, w, p)
        d1 = ad.derive(g, u, xs)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (nn.forward_numpy(spec, w, p + e)[0] - nn.forward_numpy(spec, w, p - e)[0]) / (2 * h)
            assert abs(g.eval(d1[i]) - fd) <= 1e-6 * max(1.0, abs(fd))


@settings(max_examples=15, deadline=None)
@given(small_nets, st.integers(0, 2**31))
def test_second_derivatives_match_fd_of_first(net, pseed):
    spec, seed = net
    w = init_glorot(spec, seed)
    rng = np.random.default_rng(pseed)
    h = 1e-5

    def first(point, i):
        g, xs, u = _u(spec, w, point)
        return g.eval(ad.derive(g, u, [xs[i]])[0])

    for p in rng.uniform(-1, 1, (10, 2)):
        g, xs, u = _u(spec, w, p)
        (ux,) = ad.derive(g, u, [xs[0]])
        (uxx,) = ad.derive(g, ux, [xs[0]])
        (uxt,) = ad.derive(g, ux, [xs[1]])
        e0, e1 = np.array([h, 0.0]), np.array([0.0, h])
        fd_xx = (first(p + e0, 0) - first(p - e0, 0)) / (2 * h)
        fd_xt = (first(p + e1, 0) - first(p - e1, 0)) / (2 * h)
        assert abs(g.eval(uxx) - fd_xx) <= 1e-4 * max(1.0, abs(fd_xx))
        assert abs(g.eval(uxt) - fd_xt) <= 1e-4 * max(1.0, abs(fd_xt))


# -- archive ---------------------------------------------------------------------------
@settings(max_examples=30, deadline=None)
@given(small_nets)
def test_archive_roundtrip(net):
    spec, seed = net
    w = init_glorot(spec, seed)
    w.flat[:] = np.random.default_rng(seed).normal(size=len(w))
    spec2, w2 = nn.loads(nn.dumps(w, spec))
    assert spec2 == spec
    assert w2.seed == w.seed
    assert w2.flat.tobytes() == w.flat.tobytes()


def test_archive_file_roundtrip(tmp_path):
    spec = MLPSpec.from_layers([2, 20, 20, 1])
    w = init_glorot(spec, 9)
    nn.save(w, spec, tmp_path / "w.pinn")
    spec2, w2 = nn.load(tmp_path / "w.pinn")
    assert (spec2, w2.seed, w2.flat.tobytes()) == (spec, 9, w.flat.tobytes())


def test_truncated_archive():
    spec = MLPSpec.from_layers([2, 4, 1])
    blob = nn.dumps(init_glorot(spec, 0), spec)
    for cut in (3, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(nn.CorruptArchiveError):
            nn.loads(blob[:cut])


def test_flipped_bit_detected():
    spec = MLPSpec.from_layers([2, 4, 1])
    blob = bytearray(nn.dumps(init_glorot(spec, 0), spec))
    blob[40] ^= 0x01
    with pytest.raises(nn.CorruptArchiveError):
        nn.loads(bytes(blob))


def test_version_mismatch_names_supported():
    spec = MLPSpec.from_layers([2, 4, 1])
    blob = bytearray(nn.dumps(init_glorot(spec, 0), spec))
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(nn.VersionMismatchError, match=r"99.*\[1\]"):
        nn.loads(bytes(blob))


def test_layout_inconsistency():
    other = MLPSpec.from_layers([2, 5, 1])
    w = init_glorot(other, 0)
    # archive claims a [2,4,1] net but carries a [2,5,1] vector; checksum is valid
    body = nn.dumps(w, other)[:-4]
    body = body.replace(b"[2,5,1]", b"[2,4,1]")
    blob = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(nn.LayoutError):
        nn.loads(blob)
