//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use edgespot::dsp::MelSpectrogram;
use edgespot::tensor::Tensor;
use edgespot::weights::WeightBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, random_vec(rng, n, -1.0, 1.0)).unwrap()
}

pub fn assert_close(a: &[f32], b: &[f32], tol: f32, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y} (tol {tol})");
    }
}

/// A `[C, F, T]` activation held in f64.
#[derive(Clone, Debug)]
pub struct Act {
    pub c: usize,
    pub f: usize,
    pub t: usize,
    pub v: Vec<f64>,
}

impl Act {
    pub fn new(c: usize, f: usize, t: usize) -> Self {
        Act { c, f, t, v: vec![0.0; c * f * t] }
    }

    pub fn from_f32(c: usize, f: usize, t: usize, v: &[f32]) -> Self {
        assert_eq!(v.len(), c * f * t);
        Act { c, f, t, v: v.iter().map(|&x| x as f64).collect() }
    }

    pub fn at(&self, c: usize, f: usize, t: usize) -> f64 {
        self.v[(c * self.f + f) * self.t + t]
    }

    pub fn set(&mut self, c: usize, f: usize, t: usize, x: f64) {
        let (ff, tt) = (self.f, self.t);
        self.v[(c * ff + f) * tt + t] = x;
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.v.iter().map(|&x| x as f32).collect()
    }

    pub fn map(mut self, g: impl Fn(f64) -> f64) -> Self {
        self.v.iter_mut().for_each(|x| *x = g(*x));
        self
    }
}

/// Geometry for the naive convolution: explicit per-side padding.
#[derive(Clone, Copy, Debug)]
pub struct Geo {
    pub out: usize,
    pub groups: usize,
    pub k: (usize, usize),
    pub stride: (usize, usize),
    pub dil: (usize, usize),
    /// (freq before, freq after, time before, time after)
    pub pad: (usize, usize, usize, usize),
}

impl Geo {
    pub fn same(out: usize, groups: usize, k: (usize, usize)) -> Self {
        Geo {
            out,
            groups,
            k,
            stride: (1, 1),
            dil: (1, 1),
            pad: ((k.0 - 1) / 2, k.0 / 2, (k.1 - 1) / 2, k.1 / 2),
        }
    }
}

/// Direct convolution: every output element sums over its receptive field,
/// reading zero outside the input.
pub fn naive_conv(x: &Act, w: &[f32], bias: Option<&[f32]>, g: Geo) -> Act {
    let in_pg = x.c / g.groups;
    let out_pg = g.out / g.groups;
    let fo = (x.f + g.pad.0 + g.pad.1 - g.dil.0 * (g.k.0 - 1) - 1) / g.stride.0 + 1;
    let to = (x.t + g.pad.2 + g.pad.3 - g.dil.1 * (g.k.1 - 1) - 1) / g.stride.1 + 1;
    let mut y = Act::new(g.out, fo, to);
    for o in 0..g.out {
        let grp = o / out_pg;
        for of in 0..fo {
            for ot in 0..to {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for ic in 0..in_pg {
                    for i in 0..g.k.0 {
                        for j in 0..g.k.1 {
                            let fi = (of * g.stride.0 + i * g.dil.0) as isize - g.pad.0 as isize;
                            let ti = (ot * g.stride.1 + j * g.dil.1) as isize - g.pad.2 as isize;
                            if fi < 0 || ti < 0 || fi >= x.f as isize || ti >= x.t as isize {
                                continue;
                            }
                            let wv = w[((o * in_pg + ic) * g.k.0 + i) * g.k.1 + j] as f64;
                            acc += wv * x.at(grp * in_pg + ic, fi as usize, ti as usize);
                        }
                    }
                }
                y.set(o, of, ot, acc);
            }
        }
    }
    y
}

/// Norm record `[4, slots]` applied per channel, or per channel and
/// contiguous frequency sub-band when `slots = C·S`.
pub fn naive_norm(x: &Act, rec: &[f32]) -> Act {
    let slots = rec.len() / 4;
    let s = slots / x.c;
    let mut y = x.clone();
    for c in 0..x.c {
        for f in 0..x.f {
            let slot = c * s + f / (x.f / s);
            let (g, b, m, v) = (rec[slot], rec[slots + slot], rec[2 * slots + slot], rec[3 * slots + slot]);
            for t in 0..x.t {
                let val = (x.at(c, f, t) - m as f64) / (v as f64 + 1e-5).sqrt() * g as f64 + b as f64;
                y.set(c, f, t, val);
            }
        }
    }
    y
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Reference PCEN straight from the recurrence, in f64.
pub fn naive_pcen(e: &[f32], bands: usize, frames: usize, p: [f32; 4]) -> Vec<f64> {
    let [alpha, r, delta, s] = p.map(|v| v as f64);
    let mut out = vec![0.0; bands * frames];
    for b in 0..bands {
        let mut m = 0.0;
        for t in 0..frames {
            let x = e[b * frames + t] as f64;
            m = if t == 0 { x } else { (1.0 - s) * m + s * x };
            out[b * frames + t] = (x / (1e-6 + m).powf(alpha) + delta).powf(r) - delta.powf(r);
        }
    }
    out
}

/// Stage table: (blocks, base channels, frequency stride, time dilation).
const STAGES: [(usize, usize, usize, usize); 4] = [(2, 8, 1, 1), (2, 12, 2, 2), (4, 16, 2, 4), (4, 20, 1, 8)];

fn rec<'a>(b: &'a WeightBundle, name: &str) -> &'a [f32] {
    &b.get(name).unwrap_or_else(|| panic!("missing {name}")).data
}

/// Full forward pass written from the architecture table, sharing no code
/// with the library's graph.
pub fn oracle_embed(mel: &MelSpectrogram, b: &WeightBundle) -> Vec<f64> {
    let tau = b.tau;
    let edgespot = b.pcen.is_some();
    let (bands, frames) = (40, 101);
    let x: Vec<f64> = match b.pcen {
        Some(p) => naive_pcen(mel.data(), bands, frames, p.to_array()),
        None => mel.data().iter().map(|&e| ((e + 1e-6) as f64).ln()).collect(),
    };
    let x = Act { c: 1, f: bands, t: frames, v: x };
    // frontend output is rounded to f32 in the library
    let x = x.map(|v| v as f32 as f64);

    let c0 = 16 * tau;
    let mut g = Geo::same(c0, 1, (5, 5));
    g.stride = (2, 1);
    let mut h = naive_norm(&naive_conv(&x, rec(b, "stem.conv"), None, g), rec(b, "stem.bn")).map(relu);

    for (si, &(n, base, stride, dil)) in STAGES.iter().enumerate() {
        let c = base * tau;
        let fused = edgespot && si < 2;
        for i in 0..n {
            let name = format!("stages.{si}.{i}");
            let s = if i == 0 { stride } else { 1 };
            let transition = h.c != c || s != 1;
            let entry = if h.c != c {
                let p = naive_conv(&h, rec(b, &format!("{name}.projection.conv")), None, Geo::same(c, 1, (1, 1)));
                naive_norm(&p, rec(b, &format!("{name}.projection.bn"))).map(relu)
            } else {
                h.clone()
            };
            let mut gf = Geo::same(c, c, (3, 1));
            gf.stride = (s, 1);
            let f2 = naive_norm(
                &naive_conv(&entry, rec(b, &format!("{name}.freq.conv")), None, gf),
                rec(b, &format!("{name}.freq.ssn")),
            );
            let mut pooled = Act::new(c, 1, f2.t);
            for ch in 0..c {
                for t in 0..f2.t {
                    let m = (0..f2.f).map(|f| f2.at(ch, f, t)).sum::<f64>() / f2.f as f64;
                    pooled.set(ch, 0, t, m);
                }
            }
            let mut gt = Geo::same(c, if fused { 1 } else { c }, (1, 3));
            gt.dil = (1, dil);
            gt.pad = (0, 0, dil, dil);
            let f1 = if fused {
                let y = naive_conv(&pooled, rec(b, &format!("{name}.temporal.conv")), None, gt);
                naive_norm(&y, rec(b, &format!("{name}.temporal.bn"))).map(swish)
            } else {
                let y = naive_conv(&pooled, rec(b, &format!("{name}.temporal.dw")), None, gt);
                let y = naive_norm(&y, rec(b, &format!("{name}.temporal.bn"))).map(swish);
                naive_conv(&y, rec(b, &format!("{name}.temporal.pw")), None, Geo::same(c, 1, (1, 1)))
            };
            let mut y = f2.clone();
            for ch in 0..c {
                for f in 0..y.f {
                    for t in 0..y.t {
                        let mut v = f2.at(ch, f, t) + f1.at(ch, 0, t);
                        if !transition {
                            v += h.at(ch, f, t);
                        }
                        y.set(ch, f, t, relu(v));
                    }
                }
            }
            h = y;
        }
    }

    let c = h.c;
    let mut gh = Geo::same(c, c, (5, 5));
    gh.pad = (0, 0, 2, 2);
    let collapsed = naive_conv(&h, rec(b, "head.dw"), None, gh);
    assert_eq!(collapsed.f, 1);
    let e = 32 * tau;
    let seq = naive_norm(&naive_conv(&collapsed, rec(b, "head.pw"), None, Geo::same(e, 1, (1, 1))), rec(b, "head.bn"))
        .map(relu);
    let t = seq.t;

    if !edgespot {
        let pooled: Vec<f64> = (0..e).map(|ch| (0..t).map(|i| seq.at(ch, 0, i)).sum::<f64>() / t as f64).collect();
        let (w, bias) = (rec(b, "proj.weight"), rec(b, "proj.bias"));
        return (0..64)
            .map(|j| bias[j] as f64 + (0..e).map(|i| w[j * e + i] as f64 * pooled[i]).sum::<f64>())
            .collect();
    }

    // positional encoding: x + depthwise 16-tap filter over offsets -8..=7
    let (filt, rb) = (rec(b, "rpe.filters"), rec(b, "rpe.bias"));
    let mut xt = vec![vec![0.0f64; e]; t]; // time-major
    for ch in 0..e {
        for i in 0..t {
            let mut phi = rb[ch] as f64;
            for j in 0..16 {
                let src = i as isize + j as isize - 8;
                if src >= 0 && (src as usize) < t {
                    phi += filt[ch * 16 + j] as f64 * seq.at(ch, 0, src as usize);
                }
            }
            xt[i][ch] = seq.at(ch, 0, i) + phi;
        }
    }

    let proj = |wn: &str, bn: &str| -> Vec<Vec<f64>> {
        let (w, bias) = (rec(b, wn), rec(b, bn));
        xt.iter()
            .map(|row| (0..64).map(|j| bias[j] as f64 + (0..e).map(|i| row[i] * w[i * 64 + j] as f64).sum::<f64>()).collect())
            .collect()
    };
    let q = proj("attention.w_q", "attention.b_q");
    let k = proj("attention.w_k", "attention.b_k");
    let v = proj("attention.w_v", "attention.b_v");
    let slope = rec(b, "attention.prelu")[0] as f64;
    let mut z = vec![vec![0.0f64; 64]; t];
    for i in 0..t {
        let logits: Vec<f64> = (0..t).map(|j| (0..64).map(|d| q[i][d] * k[j][d]).sum::<f64>() / 8.0).collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let sum: f64 = ex.iter().sum();
        for j in 0..t {
            for d in 0..64 {
                z[i][d] += ex[j] / sum * v[j][d];
            }
        }
        for d in 0..64 {
            if z[i][d] < 0.0 {
                z[i][d] *= slope;
            }
        }
    }
    let (aw, ab) = (rec(b, "aggregate.weight"), rec(b, "aggregate.bias")[0] as f64);
    (0..64).map(|d| ab + (0..t).map(|i| aw[i] as f64 * z[i][d]).sum::<f64>()).collect()
}
