//! Train-time augmentation: random crop with zero padding plus horizontal
//! flip. Deterministic given the caller's RNG; the eval path never calls in
//! here.

use crate::rng::SeedRng;

/// Flip one C,H,W sample left-right in place.
pub fn flip_horizontal(sample: &mut [f32], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in 0..h {
            let row = &mut sample[(ch * h + y) * w..(ch * h + y + 1) * w];
            row.reverse();
        }
    }
}

/// Shifted crop out of a zero-padded copy: offsets in [0, 2*pad] select the
/// window; (pad, pad) is the identity.
pub fn crop_shifted(sample: &[f32], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; sample.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize + dy as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + dx as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = sample[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

/// Augment a batch in place: per-sample random shift (4-pixel padding) and
/// fair-coin horizontal flip.
pub fn augment_batch(batch: &mut [f32], n: usize, c: usize, h: usize, w: usize, rng: &mut SeedRng) {
    const PAD: usize = 4;
    let sample_len = c * h * w;
    debug_assert_eq!(batch.len(), n * sample_len);
    for i in 0..n {
        let dy = rng.below(2 * PAD + 1);
        let dx = rng.below(2 * PAD + 1);
        let flip = rng.below(2) == 1;
        let s = &mut batch[i * sample_len..(i + 1) * sample_len];
        let cropped = crop_shifted(s, c, h, w, PAD, dy, dx);
        s.copy_from_slice(&cropped);
        if flip {
            flip_horizontal(s, c, h, w);
        }
    }
}
