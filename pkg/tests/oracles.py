"""Reference implementations used as test oracles.

Nothing here calls into ``letnet.ops``; each function is written from the
definition with explicit loops (or einsum over explicit kernel taps) so a
shared bug cannot make both sides agree.
"""

from __future__ import annotations

import math

import numpy as np

BN_EPS = 1e-5
LN_EPS = 1e-5


def pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def conv2d_loop(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """Scalar-loop cross-correlation; bounds-checked instead of padded."""
    (sh, sw), (ph, pw), (dh, dw) = pair(stride), pair(padding), pair(dilation)
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    wo = (wd + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            g = co // cout_g
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cin_g):
                        for ky in range(kh):
                            iy = oy * sh - ph + ky * dh
                            if not 0 <= iy < h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw - pw + kx * dw
                                if 0 <= ix < wd:
                                    acc += float(x[bi, g * cin_g + ci, iy, ix]) * float(w[co, ci, ky, kx])
                    out[bi, co, oy, ox] = acc
    return out


def conv2d_ref(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """Faster reference for block-sized inputs: one einsum per group and tap."""
    (sh, sw), (ph, pw), (dh, dw) = pair(stride), pair(padding), pair(dilation)
    x = np.asarray(x, dtype=np.float64)
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    wo = (wd + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    xp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    out = np.zeros((n, cout, ho, wo))
    for g in range(groups):
        xs = xp[:, g * cin_g:(g + 1) * cin_g]
        ws = np.asarray(w[g * cout_g:(g + 1) * cout_g], dtype=np.float64)
        for ky in range(kh):
            for kx in range(kw):
                patch = xs[:, :, ky * dh: ky * dh + sh * (ho - 1) + 1: sh, kx * dw: kx * dw + sw * (wo - 1) + 1: sw]
                out[:, g * cout_g:(g + 1) * cout_g] += np.einsum("nchw,oc->nohw", patch, ws[:, :, ky, kx])
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, -1, 1, 1)
    return out


def pool2d_loop(x, kind, kernel, stride=None):
    kh, kw = pair(kernel)
    sh, sw = pair(stride) if stride is not None else (kh, kw)
    n, c, h, w = x.shape
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((n, c, ho, wo))
    for bi in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    window = [float(x[bi, ch, oy * sh + i, ox * sw + j]) for i in range(kh) for j in range(kw)]
                    out[bi, ch, oy, ox] = max(window) if kind == "max" else math.fsum(window) / len(window)
    return out


def global_pool_loop(x, kind):
    n, c = x.shape[:2]
    out = np.zeros((n, c, 1, 1))
    for bi in range(n):
        for ch in range(c):
            vals = [float(v) for v in np.asarray(x[bi, ch]).ravel()]
            out[bi, ch, 0, 0] = max(vals) if kind == "max" else math.fsum(vals) / len(vals)
    return out


def channel_pool_loop(x, kind):
    n, c, h, w = x.shape
    out = np.zeros((n, 1, h, w))
    for bi in range(n):
        for i in range(h):
            for j in range(w):
                vals = [float(x[bi, ch, i, j]) for ch in range(c)]
                out[bi, 0, i, j] = max(vals) if kind == "max" else math.fsum(vals) / c
    return out


def softmax_loop(x, axis):
    x = np.asarray(x, dtype=np.float64)
    moved = np.moveaxis(x, axis, -1)
    out = np.empty_like(moved)
    for idx in np.ndindex(moved.shape[:-1]):
        row = [float(v) for v in moved[idx]]
        top = max(row)
        exps = [math.exp(v - top) for v in row]
        total = math.fsum(exps)
        out[idx] = [e / total for e in exps]
    return np.moveaxis(out, -1, axis)


def shuffle_loop(x, groups):
    """Output channel j comes from input channel (j mod g) * (C / g) + j div g."""
    c = x.shape[1]
    per = c // groups
    out = np.empty_like(x)
    for j in range(c):
        out[:, j] = x[:, (j % groups) * per + j // groups]
    return out


def resize_loop(x, out_h, out_w):
    """Half-pixel-centre bilinear interpolation, one output pixel at a time."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))

    def coord(o, size_in, size_out):
        src = (o + 0.5) * size_in / size_out - 0.5
        src = max(src, 0.0)
        lo = min(int(math.floor(src)), size_in - 1)
        hi = min(lo + 1, size_in - 1)
        return lo, hi, src - lo

    for oy in range(out_h):
        y0, y1, fy = coord(oy, h, out_h)
        for ox in range(out_w):
            x0, x1, fx = coord(ox, w, out_w)
            out[:, :, oy, ox] = (
                (1 - fy) * (1 - fx) * x[:, :, y0, x0] + (1 - fy) * fx * x[:, :, y0, x1]
                + fy * (1 - fx) * x[:, :, y1, x0] + fy * fx * x[:, :, y1, x1]
            )
    return out


def attention_loop(q, k, v, segments):
    """Per head, per segment, per query: explicit scores, softmax and weighted sum."""
    b, heads, n, d = q.shape
    seg = n // segments
    out = np.zeros((b, heads, n, d))
    for bi in range(b):
        for hh in range(heads):
            for s in range(segments):
                lo = s * seg
                for i in range(lo, lo + seg):
                    scores = [float(np.dot(q[bi, hh, i], k[bi, hh, j])) / math.sqrt(d) for j in range(lo, lo + seg)]
                    top = max(scores)
                    e = [math.exp(t - top) for t in scores]
                    z = math.fsum(e)
                    for jj, j in enumerate(range(lo, lo + seg)):
                        out[bi, hh, i] += (e[jj] / z) * v[bi, hh, j]
    return out


def iou_bruteforce(pred, truth, num_classes, ignore_index=255):
    """Per-class IoU by walking every pixel; ``None`` for classes never seen."""
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for p, t in zip(np.asarray(pred).ravel().tolist(), np.asarray(truth).ravel().tolist()):
        if t == ignore_index:
            continue
        if p == t:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return [None if tp[c] + fp[c] + fn[c] == 0 else tp[c] / (tp[c] + fp[c] + fn[c]) for c in range(num_classes)]


# -- module-level references ------------------------------------------------------


def bn_eval(x, bn):
    g, b = bn.weight.data.astype(np.float64), bn.bias.data.astype(np.float64)
    rm, rv = bn.running_mean.astype(np.float64), bn.running_var.astype(np.float64)
    shape = (1, -1, 1, 1)
    return (x - rm.reshape(shape)) / np.sqrt(rv.reshape(shape) + BN_EPS) * g.reshape(shape) + b.reshape(shape)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def relu(z):
    return np.maximum(z, 0.0)


def conv_module(x, m):
    s = m.spec
    return conv2d_ref(x, m.weight.data, None if m.bias is None else m.bias.data,
                      s.stride, s.padding, s.dilation, s.groups)


def convbn_module(x, m):
    y = bn_eval(conv_module(x, m.conv), m.bn)
    return relu(y) if m.act else y


def channel_attention_ref(x, weight):
    k = len(weight)
    pooled = x.mean(axis=(2, 3))
    c = pooled.shape[1]
    mixed = np.zeros_like(pooled)
    for ch in range(c):
        for t in range(k):
            src = ch + t - k // 2
            if 0 <= src < c:
                mixed[:, ch] += weight[t] * pooled[:, src]
    return x * sigmoid(mixed)[:, :, None, None]


def ldb_ref(x, m):
    """LDB in eval mode from its stored weights."""
    f1 = convbn_module(conv_module(convbn_module(x, m.reduce), m.trunk_3x1), m.trunk_1x3)
    f21 = channel_attention_ref(convbn_module(conv_module(f1, m.local_3x1), m.local_1x3), m.local_ca.weight.data)
    f22 = channel_attention_ref(convbn_module(conv_module(f1, m.dilated_3x1), m.dilated_1x3),
                                m.dilated_ca.weight.data)
    y = convbn_module(f1 + f21 + f22, m.restore) + x
    return shuffle_loop(y, m.cfg.shuffle_groups)


def linear_ref(x, m):
    y = x @ m.weight.data.astype(np.float64).T
    return y if m.bias is None else y + m.bias.data


def layer_norm_ref(x, m):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * m.weight.data + m.bias.data


def emha_ref(tokens, m):
    cfg = m.cfg
    b, n, dim = tokens.shape
    qkv = linear_ref(tokens, m.qkv)
    q, k, v = (qkv[..., i * dim:(i + 1) * dim] for i in range(3))

    def heads(t):
        return t.reshape(b, n, cfg.heads, cfg.head_dim).transpose(0, 2, 1, 3)

    out = attention_loop(heads(q), heads(k), heads(v), cfg.segments)
    return linear_ref(out.transpose(0, 2, 1, 3).reshape(b, n, dim), m.proj)


def et_ref(x, m):
    n, c, h, w = x.shape
    t = x.reshape(n, c, h * w).transpose(0, 2, 1)
    t = t + linear_ref(emha_ref(linear_ref(layer_norm_ref(t, m.norm1), m.reduce), m.attn), m.expand)
    t = t + linear_ref(relu(linear_ref(layer_norm_ref(t, m.norm2), m.fc1)), m.fc2)
    return t.transpose(0, 2, 1).reshape(n, c, h, w)


def fe_ref(x, m):
    pooled = x.mean(axis=(2, 3), keepdims=True)
    gate_c = sigmoid(conv_module(relu(conv_module(pooled, m.squeeze)), m.excite))
    maps = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
    gate_s = sigmoid(bn_eval(conv_module(maps, m.spatial), m.spatial_bn))
    return conv_module(x * gate_c, m.fuse_channel) + conv_module(x * gate_s, m.fuse_spatial) + x


def pa_ref(x, m):
    return sigmoid(conv_module(x, m.conv)) * x


def model_ref(images, model):
    """Whole-network eval-mode forward composed from the block references."""
    cfg = model.cfg
    h, w = images.shape[2:]

    def stage(x, s):
        for _, block in s.blocks():
            x = ldb_ref(x, block)
        return x

    def down(x, d):
        y = np.concatenate([conv_module(x, d.conv), pool2d_loop(x, "max", 2)], axis=1)
        return relu(bn_eval(y, d.bn))

    def up(x, u):
        y = convbn_module(x, u.block)
        return resize_loop(y, 2 * y.shape[2], 2 * y.shape[3])

    def skip(x, s):
        if s.mode == "fe":
            x = fe_ref(x, s.fe)
        return conv_module(x, s.proj)

    s1 = stage(convbn_module(images.astype(np.float64), model.stem), model.stage1)
    s2 = stage(down(s1, model.down1), model.stage2)
    s3 = stage(down(s2, model.down2), model.stage3)
    x = et_ref(s3, model.transformer) if cfg.transformer else s3
    if cfg.skips[2] != "off":
        x = x + skip(s3, model.skip3)
    x = stage(up(x, model.up2), model.dec2)
    if cfg.skips[1] != "off":
        x = x + skip(s2, model.skip2)
    x = stage(up(x, model.up1), model.dec1)
    if cfg.skips[0] != "off":
        x = x + skip(s1, model.skip1)
    if cfg.pixel_attention:
        x = pa_ref(x, model.pa)
    return resize_loop(conv_module(x, model.classifier), h, w)


# -- accounting references ----------------------------------------------------------


def enumerate_weight_tensors(module) -> list[tuple[str, tuple[int, ...]]]:
    """Walk object attributes (not the registry) and list every Parameter."""
    from letnet.nn import Module, Parameter

    found = []
    seen = set()

    def visit(obj, prefix):
        if id(obj) in seen:
            return
        seen.add(id(obj))
        for name, value in sorted(vars(obj).items()):
            if name.startswith("_"):
                continue
            if isinstance(value, Parameter):
                found.append((prefix + name, value.data.shape))
            elif isinstance(value, Module):
                visit(value, f"{prefix}{name}.")

    visit(module, "")
    return sorted(set(found))


def walk_macs(model, h: int, w: int, n: int = 1) -> int:
    """MACs of the network from first principles, walking its layers in order."""
    from letnet.blocks import LDB, ChannelAttention, EfficientTransformer, FeatureEnhancement
    from letnet.nn import Conv2d

    total = 0

    def conv_cost(m: Conv2d, hi, wi):
        s = m.spec
        (kh, kw), (sh, sw), (ph, pw), (dh, dw) = s.kernel, s.stride, s.padding, s.dilation
        ho = (hi + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (wi + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        return n * ho * wo * s.out_channels * kh * kw * (s.in_channels // s.groups), ho, wo

    def ca_cost(m: ChannelAttention, c, hi, wi):
        return n * c * hi * wi + n * c * m.kernel

    def ldb_cost(m: LDB, hi, wi):
        c, half = m.cfg.channels, m.cfg.channels // 2
        cost = conv_cost(m.reduce.conv, hi, wi)[0]
        for conv in (m.trunk_3x1, m.trunk_1x3.conv, m.local_3x1, m.local_1x3.conv, m.dilated_3x1, m.dilated_1x3.conv):
            cost += conv_cost(conv, hi, wi)[0]
        cost += ca_cost(m.local_ca, half, hi, wi) + ca_cost(m.dilated_ca, half, hi, wi)
        cost += conv_cost(m.restore.conv, hi, wi)[0]
        assert m.restore.conv.spec.out_channels == c
        return cost

    def fe_cost(m: FeatureEnhancement, c, hi, wi):
        cost = n * c * hi * wi + conv_cost(m.squeeze, 1, 1)[0] + conv_cost(m.excite, 1, 1)[0]
        cost += 2 * n * c * hi * wi + conv_cost(m.spatial, hi, wi)[0]
        return cost + conv_cost(m.fuse_channel, hi, wi)[0] + conv_cost(m.fuse_spatial, hi, wi)[0]

    def et_cost(m: EfficientTransformer, hi, wi):
        cfg = m.cfg
        tokens = n * hi * wi
        c, r = cfg.channels, cfg.reduced
        seg = hi * wi // cfg.segments
        cost = tokens * c * r  # reduce
        cost += tokens * r * 3 * r + tokens * r * r  # qkv and out-projection
        cost += n * cfg.heads * cfg.segments * 2 * seg * seg * cfg.head_dim
        cost += tokens * r * c  # expand
        cost += 2 * tokens * c * cfg.mlp_ratio * c  # MLP
        return cost

    cfg = model.cfg
    r1, r2, r3 = (h // 2, w // 2), (h // 4, w // 4), (h // 8, w // 8)
    c1, c2, c3 = cfg.channels
    total += conv_cost(model.stem.conv, h, w)[0]
    for _, b in model.stage1.blocks():
        total += ldb_cost(b, *r1)
    total += conv_cost(model.down1.conv, *r1)[0] + n * c1 * r1[0] * r1[1]
    for _, b in model.stage2.blocks():
        total += ldb_cost(b, *r2)
    total += conv_cost(model.down2.conv, *r2)[0] + n * c2 * r2[0] * r2[1]
    for _, b in model.stage3.blocks():
        total += ldb_cost(b, *r3)
    if cfg.transformer:
        total += et_cost(model.transformer, *r3)
    for idx, c, res in ((3, c3, r3), (2, c2, r2), (1, c1, r1)):
        if cfg.skips[idx - 1] == "off":
            continue
        skip = getattr(model, f"skip{idx}")
        if skip.mode == "fe":
            total += fe_cost(skip.fe, c, *res)
        total += conv_cost(skip.proj, *res)[0]
    total += conv_cost(model.up2.block.conv, *r3)[0]
    for _, b in model.dec2.blocks():
        total += ldb_cost(b, *r2)
    total += conv_cost(model.up1.block.conv, *r2)[0]
    for _, b in model.dec1.blocks():
        total += ldb_cost(b, *r1)
    if cfg.pixel_attention:
        total += conv_cost(model.pa.conv, *r1)[0]
    total += conv_cost(model.classifier, *r1)[0]
    return total
