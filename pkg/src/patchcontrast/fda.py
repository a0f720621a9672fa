"""Spectral appearance translation: swap low-frequency amplitude between images.

A source image is pushed toward a target image's look by replacing the
low-frequency part of its per-channel amplitude spectrum with the target's
while keeping the source phase everywhere, then inverting the transform.
Low frequencies live in a centered square window (after shifting the zero
frequency to the center) of side 2*floor(window_ratio * min(H, W)) + 1;
a zero ratio means an empty window and the image passes through unchanged.

The swap window is symmetric about the zero-frequency bin, so Hermitian
symmetry of the composed spectrum is preserved and the inverse transform is
real up to rounding.  Outputs are clamped to [0, 1].
"""

from __future__ import annotations

import numpy as np


def dft2(channel):
    """Unnormalized 2-D DFT of one real channel."""
    return np.fft.fft2(np.asarray(channel, dtype=np.float64))


def idft2(spectrum):
    """Inverse 2-D DFT, returning the real part."""
    return np.fft.ifft2(spectrum).real


def amplitude(spectrum):
    return np.abs(spectrum)


def phase(spectrum):
    return np.angle(spectrum)


def window_halfwidth(window_ratio, h, w):
    """Half-width b of the centered swap window; side is 2b+1, b=0 is empty."""
    if not 0.0 <= window_ratio <= 0.5:
        raise ValueError("window_ratio must lie in [0, 0.5]")
    return int(np.floor(window_ratio * min(h, w)))


def _window_slices(h, w, b):
    ch, cw = h // 2, w // 2
    return (
        slice(max(0, ch - b), min(h, ch + b + 1)),
        slice(max(0, cw - b), min(w, cw + b + 1)),
    )


def _translate_channel(src, tgt, b):
    f_src = dft2(src)
    amp_src = np.fft.fftshift(np.abs(f_src))
    amp_tgt = np.fft.fftshift(np.abs(dft2(tgt)))
    sh, sw = _window_slices(*src.shape, b)
    amp_src[sh, sw] = amp_tgt[sh, sw]
    amp = np.fft.ifftshift(amp_src)
    composed = amp * np.exp(1j * np.angle(f_src))
    return idft2(composed)


def translate(source, target, window_ratio):
    """Translate `source` toward `target`'s appearance.

    Both are [H,W] or channel-first [C,H,W] arrays of reals in [0,1] with
    equal shapes.  Returns a new array in [0,1]; the source is never
    modified.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape:
        raise ValueError(f"image shapes differ: {src.shape} vs {tgt.shape}")
    if src.ndim not in (2, 3):
        raise ValueError("images must be [H,W] or [C,H,W]")
    b = window_halfwidth(window_ratio, src.shape[-2], src.shape[-1])
    if b == 0:
        return src.copy()
    if src.ndim == 2:
        out = _translate_channel(src, tgt, b)
    else:
        out = np.stack(
            [_translate_channel(src[c], tgt[c], b) for c in range(src.shape[0])]
        )
    return np.clip(out, 0.0, 1.0)


def pick_targets(n_sources, n_targets, seed):
    """Seeded uniform choice of a target index for each source image.

    Per-image generators keyed by (seed, index) make the assignment stable
    under parallel or out-of-order translation.
    """
    if n_targets < 1:
        raise ValueError("target pool is empty")
    return np.array(
        [
            np.random.default_rng([seed, i]).integers(0, n_targets)
            for i in range(n_sources)
        ],
        dtype=np.intp,
    )


def translate_pool(sources, targets, window_ratio, seed):
    """Translate every source toward a randomly assigned target image."""
    idx = pick_targets(len(sources), len(targets), seed)
    return np.stack(
        [translate(sources[i], targets[j], window_ratio) for i, j in enumerate(idx)]
    )
