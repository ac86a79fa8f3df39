//! Naive f64 reference implementations shared by the integration tests.
#![allow(dead_code)]

use loopprune_core::Tensor;

pub mod gradcheck;

#[derive(Debug, Clone, PartialEq)]
pub struct T64 {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl T64 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        T64 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from(t: &Tensor) -> Self {
        T64 {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let [_, cs, hs, ws] = self.shape;
        &mut self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> T64 {
        T64 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// 3x3, stride 1, zero padding 1, direct six-deep loop.
pub fn conv2d(x: &T64, w: &T64, b: &T64) -> T64 {
    let [n, ci, h, wd] = x.shape;
    let co = w.shape[0];
    let mut out = T64::zeros([n, co, h, wd]);
    for s in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data[o];
                    for i in 0..ci {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let sy = y as isize + dy as isize - 1;
                                let sx = xx as isize + dx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.at(o, i, dy, dx) * x.at(s, i, sy as usize, sx as usize);
                            }
                        }
                    }
                    *out.at_mut(s, o, y, xx) = acc;
                }
            }
        }
    }
    out
}

pub fn dense(x: &T64, w: &T64, b: &T64) -> T64 {
    let [n, ci, _, _] = x.shape;
    let co = w.shape[0];
    let mut out = T64::zeros([n, co, 1, 1]);
    for s in 0..n {
        for o in 0..co {
            let mut acc = b.data[o];
            for i in 0..ci {
                acc += w.data[o * ci + i] * x.data[s * ci + i];
            }
            out.data[s * co + o] = acc;
        }
    }
    out
}

pub fn relu(x: &T64) -> T64 {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &T64) -> T64 {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn gap(x: &T64) -> T64 {
    let [n, c, h, w] = x.shape;
    let mut out = T64::zeros([n, c, 1, 1]);
    for s in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    acc += x.at(s, ch, y, xx);
                }
            }
            out.data[s * c + ch] = acc / (h * w) as f64;
        }
    }
    out
}

pub fn channel_scale(x: &T64, s: &T64) -> T64 {
    let [n, c, h, w] = x.shape;
    let mut out = x.clone();
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    *out.at_mut(i, ch, y, xx) *= s.data[i * c + ch];
                }
            }
        }
    }
    out
}

pub fn add(a: &T64, b: &T64) -> T64 {
    T64 {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

pub fn concat(a: &T64, b: &T64) -> T64 {
    let [n, ca, h, w] = a.shape;
    let cb = b.shape[1];
    let mut out = T64::zeros([n, ca + cb, h, w]);
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                for c in 0..ca {
                    *out.at_mut(s, c, y, x) = a.at(s, c, y, x);
                }
                for c in 0..cb {
                    *out.at_mut(s, ca + c, y, x) = b.at(s, c, y, x);
                }
            }
        }
    }
    out
}

pub fn index_add(base: &T64, update: &T64, idx: &[usize]) -> T64 {
    let [n, _, h, w] = base.shape;
    let mut out = base.clone();
    for s in 0..n {
        for (k, &j) in idx.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    *out.at_mut(s, j, y, x) += update.at(s, k, y, x);
                }
            }
        }
    }
    out
}

pub fn mae(p: &T64, t: &T64) -> f64 {
    p.data.iter().zip(&t.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.data.len() as f64
}

/// Dense input/output weights and the block's index set, in f64.
pub struct Block64 {
    pub w1: T64,
    pub b1: T64,
    pub w2: T64,
    pub b2: T64,
    pub wd1: T64,
    pub bd1: T64,
    pub wd2: T64,
    pub bd2: T64,
    pub residual: Option<Vec<usize>>,
}

pub struct BlockTrace {
    pub pre1: T64,
    pub pre_d1: T64,
    pub out: T64,
}

pub fn block(b: &Block64, x: &T64) -> BlockTrace {
    let pre1 = conv2d(x, &b.w1, &b.b1);
    let u2 = conv2d(&relu(&pre1), &b.w2, &b.b2);
    let pre_d1 = dense(&gap(&u2), &b.wd1, &b.bd1);
    let s = sigmoid(&dense(&relu(&pre_d1), &b.wd2, &b.bd2));
    let y = channel_scale(&u2, &s);
    let out = match &b.residual {
        Some(j) => index_add(x, &y, j),
        None => y,
    };
    BlockTrace { pre1, pre_d1, out }
}
