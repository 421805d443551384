//! Straight-line reference implementations on plain row-major matrices.
//! Nothing here goes through the tape.

#![allow(dead_code)]

use skmix_core::mixer::{MixerBlock, MixerStack};
use skmix_core::mru::{Bottleneck, Mru};
use skmix_core::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct M {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl M {
    pub fn new(r: usize, c: usize, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), r * c);
        M { r, c, d }
    }

    pub fn of(t: &Tensor) -> Self {
        match t.shape() {
            [n] => M::new(1, *n, t.data().to_vec()),
            [r, c] => M::new(*r, *c, t.data().to_vec()),
            s => panic!("rank {s:?}"),
        }
    }

    pub fn param(store: &ParamStore, id: ParamId) -> Self {
        M::of(store.value(id))
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }

    pub fn matmul(&self, o: &M) -> M {
        assert_eq!(self.c, o.r);
        let mut d = vec![0.0; self.r * o.c];
        for i in 0..self.r {
            for j in 0..o.c {
                let mut s = 0.0;
                for k in 0..self.c {
                    s += self.at(i, k) * o.at(k, j);
                }
                d[i * o.c + j] = s;
            }
        }
        M::new(self.r, o.c, d)
    }

    pub fn t(&self) -> M {
        let mut d = vec![0.0; self.r * self.c];
        for i in 0..self.r {
            for j in 0..self.c {
                d[j * self.r + i] = self.at(i, j);
            }
        }
        M::new(self.c, self.r, d)
    }

    pub fn add(&self, o: &M) -> M {
        assert_eq!((self.r, self.c), (o.r, o.c));
        M::new(self.r, self.c, self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect())
    }

    /// Adds `b[1×c]` to every row or `b[r×1]` to every column.
    pub fn bias(&self, b: &M) -> M {
        let mut out = self.clone();
        for i in 0..self.r {
            for j in 0..self.c {
                out.d[i * self.c + j] += if b.r == 1 { b.d[j] } else { b.d[i] };
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> M {
        M::new(self.r, self.c, self.d.iter().map(|&x| f(x)).collect())
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> M {
        M::new(range.len(), self.c, self.d[range.start * self.c..range.end * self.c].to_vec())
    }

    pub fn cols(&self, range: std::ops::Range<usize>) -> M {
        let mut d = Vec::new();
        for i in 0..self.r {
            d.extend_from_slice(&self.d[i * self.c + range.start..i * self.c + range.end]);
        }
        M::new(self.r, range.len(), d)
    }

    pub fn vcat(parts: &[&M]) -> M {
        let c = parts[0].c;
        let mut d = Vec::new();
        for p in parts {
            assert_eq!(p.c, c);
            d.extend_from_slice(&p.d);
        }
        M::new(d.len() / c, c, d)
    }

    pub fn hcat(a: &M, b: &M) -> M {
        assert_eq!(a.r, b.r);
        let mut d = Vec::new();
        for i in 0..a.r {
            d.extend_from_slice(&a.d[i * a.c..(i + 1) * a.c]);
            d.extend_from_slice(&b.d[i * b.c..(i + 1) * b.c]);
        }
        M::new(a.r, a.c + b.c, d)
    }

    pub fn scale(&self, k: f64) -> M {
        self.map(|x| x * k)
    }

    pub fn mean_rows(&self) -> M {
        let mut d = vec![0.0; self.c];
        for i in 0..self.r {
            for j in 0..self.c {
                d[j] += self.at(i, j);
            }
        }
        M::new(1, self.c, d.into_iter().map(|x| x / self.r as f64).collect())
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Row-wise LayerNorm over columns with population variance.
pub fn layer_norm(x: &M, gamma: &M, beta: &M, eps: f64) -> M {
    let mut out = x.clone();
    for i in 0..x.r {
        let row = &x.d[i * x.c..(i + 1) * x.c];
        let mu = row.iter().sum::<f64>() / x.c as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..x.c {
            out.d[i * x.c + j] = (row[j] - mu) * inv * gamma.d[j] + beta.d[j];
        }
    }
    out
}

pub fn block(store: &ParamStore, b: &MixerBlock, x: &M) -> M {
    let p = |id| M::param(store, id);
    let s = x.r;
    let n1 = layer_norm(x, &p(b.norm1_gamma), &p(b.norm1_beta), 1e-5);
    let w1 = p(b.token_fc1.weight).cols(0..s);
    let w2 = p(b.token_fc2.weight).rows(0..s);
    let b2 = p(b.token_fc2.bias).rows(0..s);
    let h = w1.matmul(&n1).bias(&p(b.token_fc1.bias)).map(gelu);
    let u = x.add(&w2.matmul(&h).bias(&b2));
    let n2 = layer_norm(&u, &p(b.norm2_gamma), &p(b.norm2_beta), 1e-5);
    let h2 = n2.matmul(&p(b.channel_fc1.weight).t()).bias(&p(b.channel_fc1.bias)).map(gelu);
    u.add(&h2.matmul(&p(b.channel_fc2.weight).t()).bias(&p(b.channel_fc2.bias)))
}

pub fn stack(store: &ParamStore, s: &MixerStack, x: &M) -> M {
    s.blocks.iter().fold(x.clone(), |acc, b| block(store, b, &acc))
}

pub fn bottleneck(store: &ParamStore, b: &Bottleneck, mem: &M) -> M {
    let p = |id| M::param(store, id);
    let h = mem.matmul(&p(b.down.weight).t()).bias(&p(b.down.bias)).map(gelu);
    h.matmul(&p(b.up.weight).t()).bias(&p(b.up.bias))
}

/// One recurrent step: returns `(new_mem, cls)`.
pub fn mru_step(store: &ParamStore, m: &Mru, mem: &M, audio: &M, video: &M, back: bool) -> (M, M) {
    let p = |id| M::param(store, id);
    let a_prev = bottleneck(store, &m.audio_bottleneck, mem);
    let v_prev = bottleneck(store, &m.video_bottleneck, mem);
    let join = |prev: &M, f: &M| if back { M::vcat(&[f, prev]) } else { M::vcat(&[prev, f]) };
    let a = join(&a_prev, audio).add(&p(m.pe_audio));
    let v = join(&v_prev, video).add(&p(m.pe_video));
    let a = stack(store, &m.audio_mixer, &a);
    let v = stack(store, &m.video_mixer, &v);
    let z = stack(store, &m.multimodal_mixer, &M::vcat(&[&p(m.cls_token), &a, &v]));
    let cls = z.rows(0..1);
    let q = stack(store, &m.memory_mixer, &M::vcat(&[mem, &cls]));
    (q.rows(0..1), cls)
}

/// A sweep in one direction: CLS per original clip index and final memory.
pub fn sweep(store: &ParamStore, m: &Mru, clips: &[(M, M)], back: bool) -> (Vec<M>, M) {
    let mut mem = M::param(store, m.initial_memory);
    let mut cls = vec![None; clips.len()];
    let order: Vec<usize> = if back { (0..clips.len()).rev().collect() } else { (0..clips.len()).collect() };
    for t in order {
        let (next, c) = mru_step(store, m, &mem, &clips[t].0, &clips[t].1, back);
        mem = next;
        cls[t] = Some(c);
    }
    (cls.into_iter().map(Option::unwrap).collect(), mem)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Overwrites every parameter with seeded values in `±scale`, so biases and
/// norm affines are exercised too.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut init = skmix_core::init::Init::new(seed);
    for p in store.iter_mut() {
        let n = p.value.len();
        let fresh = init.linear(1, n.max(1));
        let k = scale * (n as f64).sqrt();
        for (v, r) in p.value.data_mut().iter_mut().zip(fresh.data()) {
            *v = r * k;
        }
    }
}

pub fn random_matrix(seed: u64, r: usize, c: usize, std: f64) -> Tensor {
    skmix_core::init::Init::new(seed).normal(&[r, c], std)
}
