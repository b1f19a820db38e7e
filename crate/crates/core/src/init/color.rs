//! Gaussian-weighted median colour of a circular pixel neighbourhood.

use crate::model::ImageBuffer;

/// Smallest value whose cumulative weight reaches half the total weight.
///
/// Minimizes `sum w_i |z - v_i|` over `z`; `samples` are `(value, weight)` and
/// are reordered in place.
pub fn weighted_median(samples: &mut [(f64, f64)]) -> f64 {
    assert!(!samples.is_empty(), "weighted median of an empty set");
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let half = 0.5 * total;
    let mut acc = 0.0;
    for &(v, w) in samples.iter() {
        acc += w;
        if acc >= half {
            return v;
        }
    }
    samples[samples.len() - 1].0
}

/// Per-channel weighted median over pixels whose centres lie within `scale`
/// of `center`, each weighted by an isotropic Gaussian with sigma `scale`.
/// Falls back to the nearest pixel when the disk holds no pixel centre.
pub fn weighted_median_color(image: &ImageBuffer, center: [f64; 2], scale: f64) -> [f32; 3] {
    let (h, w) = image.dims();
    let [cx, cy] = center;
    let c0 = ((cx - scale - 0.5).ceil().max(0.0)) as usize;
    let c1 = ((cx + scale - 0.5).floor()).min(w as f64 - 1.0);
    let r0 = ((cy - scale - 0.5).ceil().max(0.0)) as usize;
    let r1 = ((cy + scale - 0.5).floor()).min(h as f64 - 1.0);
    let inv = 1.0 / (2.0 * scale * scale);
    let mut chans: [Vec<(f64, f64)>; 3] = Default::default();
    if c1 >= 0.0 && r1 >= 0.0 {
        for r in r0..=r1 as usize {
            let dy = r as f64 + 0.5 - cy;
            for c in c0..=c1 as usize {
                let dx = c as f64 + 0.5 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 > scale * scale {
                    continue;
                }
                let wt = (-d2 * inv).exp();
                for (ch, list) in chans.iter_mut().enumerate() {
                    list.push((image.get(r, c, ch) as f64, wt));
                }
            }
        }
    }
    if chans[0].is_empty() {
        let r = (cy.floor().max(0.0) as usize).min(h - 1);
        let c = (cx.floor().max(0.0) as usize).min(w - 1);
        return image.pixel(r, c);
    }
    chans.map(|mut list| weighted_median(&mut list) as f32)
}
