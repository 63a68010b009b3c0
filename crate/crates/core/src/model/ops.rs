//! Fused CPU kernels with hand-written backward passes: the GRU recurrence,
//! the weighted band-mask overlap-add, and iSTFT synthesis.

use std::sync::Arc;

use candle_core::{
    bail, CpuStorage, CustomOp1, CustomOp2, DType, Layout, Shape, Tensor, WithDType,
};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayView3, LinalgScalar};
use num_traits::Float;
use realfft::FftNum;

use crate::dsp::{StftConfig, StftKernel};

pub(crate) trait Elem: WithDType + Float + FftNum + LinalgScalar {}
impl Elem for f32 {}
impl Elem for f64 {}

fn contiguous<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((start, end)) => Ok(&s.as_slice::<T>()?[start..end]),
        None => bail!("custom op expects contiguous input"),
    }
}

fn host<T: WithDType>(t: &Tensor) -> candle_core::Result<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

// ---------------------------------------------------------------------------
// GRU recurrence

/// Runs the hidden-state recurrence of a GRU over `[N, L, 3H]` precomputed input
/// gates (order r, z, n). The second operand packs `w_hh [3H, H]` followed by
/// `b_hh [3H]`. Output is `[N, L, H]`; the initial state is zero.
pub(crate) struct GruScan {
    pub hidden: usize,
    pub reverse: bool,
}

struct GruTrace<T> {
    r: Vec<Array2<T>>,
    z: Vec<Array2<T>>,
    n: Vec<Array2<T>>,
    ghn: Vec<Array2<T>>,
    h_prev: Vec<Array2<T>>,
}

impl GruScan {
    fn time_index(&self, step: usize, len: usize) -> usize {
        if self.reverse {
            len - 1 - step
        } else {
            step
        }
    }

    fn run<T: Elem>(
        &self,
        gi: ArrayView3<T>,
        w: ArrayView2<T>,
        b: &[T],
        trace: Option<&mut GruTrace<T>>,
    ) -> Vec<T> {
        let (batch, len, _) = gi.dim();
        let h = self.hidden;
        let mut out = vec![T::zero(); batch * len * h];
        let mut h_prev = Array2::<T>::zeros((batch, h));
        let mut gh = Array2::<T>::zeros((batch, 3 * h));
        let mut trace = trace;
        for step in 0..len {
            let t = self.time_index(step, len);
            general_mat_mul(T::one(), &h_prev, &w.t(), T::zero(), &mut gh);
            let mut r = Array2::<T>::zeros((batch, h));
            let mut z = Array2::<T>::zeros((batch, h));
            let mut n = Array2::<T>::zeros((batch, h));
            let mut ghn = Array2::<T>::zeros((batch, h));
            let mut h_next = Array2::<T>::zeros((batch, h));
            for i in 0..batch {
                for j in 0..h {
                    let gr = gi[[i, t, j]] + gh[[i, j]] + b[j];
                    let gz = gi[[i, t, h + j]] + gh[[i, h + j]] + b[h + j];
                    let hn = gh[[i, 2 * h + j]] + b[2 * h + j];
                    let rv = sigmoid(gr);
                    let zv = sigmoid(gz);
                    let nv = (gi[[i, t, 2 * h + j]] + rv * hn).tanh();
                    let hv = (T::one() - zv) * nv + zv * h_prev[[i, j]];
                    r[[i, j]] = rv;
                    z[[i, j]] = zv;
                    n[[i, j]] = nv;
                    ghn[[i, j]] = hn;
                    h_next[[i, j]] = hv;
                    out[(i * len + t) * h + j] = hv;
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.r.push(r);
                tr.z.push(z);
                tr.n.push(n);
                tr.ghn.push(ghn);
                tr.h_prev.push(h_prev.clone());
            }
            h_prev = h_next;
        }
        out
    }

    fn fwd<T: Elem>(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, len, three_h) = l1.shape().dims3()?;
        let h = self.hidden;
        if three_h != 3 * h || l2.shape().elem_count() != 3 * h * h + 3 * h {
            bail!("gru scan: inconsistent shapes {:?} / {:?}", l1.shape(), l2.shape());
        }
        let gi = ArrayView3::from_shape((batch, len, three_h), contiguous::<T>(s1, l1)?)
            .map_err(candle_core::Error::wrap)?;
        let packed = contiguous::<T>(s2, l2)?;
        let w = ArrayView2::from_shape((3 * h, h), &packed[..3 * h * h])
            .map_err(candle_core::Error::wrap)?;
        let out = self.run(gi, w, &packed[3 * h * h..], None);
        Ok((T::to_cpu_storage_owned(out), Shape::from((batch, len, h))))
    }

    fn bwd_impl<T: Elem>(
        &self,
        gi_t: &Tensor,
        packed_t: &Tensor,
        grad_t: &Tensor,
    ) -> candle_core::Result<(Tensor, Tensor)> {
        let (batch, len, three_h) = gi_t.dims3()?;
        let h = self.hidden;
        let gi_v = host::<T>(gi_t)?;
        let packed = host::<T>(packed_t)?;
        let grad = host::<T>(grad_t)?;
        let gi = ArrayView3::from_shape((batch, len, three_h), &gi_v[..])
            .map_err(candle_core::Error::wrap)?;
        let w = ArrayView2::from_shape((3 * h, h), &packed[..3 * h * h])
            .map_err(candle_core::Error::wrap)?;
        let mut tr = GruTrace {
            r: Vec::with_capacity(len),
            z: Vec::with_capacity(len),
            n: Vec::with_capacity(len),
            ghn: Vec::with_capacity(len),
            h_prev: Vec::with_capacity(len),
        };
        self.run(gi, w, &packed[3 * h * h..], Some(&mut tr));

        let mut d_gi = vec![T::zero(); batch * len * three_h];
        let mut d_w = Array2::<T>::zeros((3 * h, h));
        let mut d_b = vec![T::zero(); 3 * h];
        let mut dh_next = Array2::<T>::zeros((batch, h));
        let mut d_gh = Array2::<T>::zeros((batch, 3 * h));
        for step in (0..len).rev() {
            let t = self.time_index(step, len);
            let (r, z, n, ghn, h_prev) = (
                &tr.r[step],
                &tr.z[step],
                &tr.n[step],
                &tr.ghn[step],
                &tr.h_prev[step],
            );
            let mut dh_carry = Array2::<T>::zeros((batch, h));
            for i in 0..batch {
                for j in 0..h {
                    let dh = grad[(i * len + t) * h + j] + dh_next[[i, j]];
                    let (rv, zv, nv) = (r[[i, j]], z[[i, j]], n[[i, j]]);
                    let dn = dh * (T::one() - zv);
                    let dz = dh * (h_prev[[i, j]] - nv);
                    let dn_pre = dn * (T::one() - nv * nv);
                    let dr = dn_pre * ghn[[i, j]];
                    let dr_pre = dr * rv * (T::one() - rv);
                    let dz_pre = dz * zv * (T::one() - zv);
                    let base = (i * len + t) * three_h;
                    d_gi[base + j] = dr_pre;
                    d_gi[base + h + j] = dz_pre;
                    d_gi[base + 2 * h + j] = dn_pre;
                    d_gh[[i, j]] = dr_pre;
                    d_gh[[i, h + j]] = dz_pre;
                    d_gh[[i, 2 * h + j]] = dn_pre * rv;
                    dh_carry[[i, j]] = dh * zv;
                }
            }
            general_mat_mul(T::one(), &d_gh.t(), h_prev, T::one(), &mut d_w);
            for i in 0..batch {
                for k in 0..3 * h {
                    d_b[k] += d_gh[[i, k]];
                }
            }
            general_mat_mul(T::one(), &d_gh, &w, T::one(), &mut dh_carry);
            dh_next = dh_carry;
        }
        let mut d_packed: Vec<T> = d_w.into_iter().collect();
        d_packed.extend(d_b);
        let dev = gi_t.device();
        Ok((
            Tensor::from_vec(d_gi, (batch, len, three_h), dev)?,
            Tensor::from_vec(d_packed, packed_t.shape(), dev)?,
        ))
    }
}

impl CustomOp2 for GruScan {
    fn name(&self) -> &'static str {
        "gru-scan"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        match s1 {
            CpuStorage::F32(_) => self.fwd::<f32>(s1, l1, s2, l2),
            CpuStorage::F64(_) => self.fwd::<f64>(s1, l1, s2, l2),
            _ => bail!("gru scan supports f32 and f64 only"),
        }
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (a, b) = match arg1.dtype() {
            DType::F32 => self.bwd_impl::<f32>(arg1, arg2, grad_res)?,
            DType::F64 => self.bwd_impl::<f64>(arg1, arg2, grad_res)?,
            dt => bail!("gru scan: unsupported dtype {dt:?}"),
        };
        Ok((Some(a), Some(b)))
    }
}

// ---------------------------------------------------------------------------
// Band-mask overlap-add

/// Placement of per-band decoder outputs inside the full-band mask.
#[derive(Debug)]
pub(crate) struct BandOlaLayout {
    pub channels: usize,
    pub bins: usize,
    /// `(first_bin, width, offset)` per band; `offset` indexes the concatenated
    /// band features, each band contributing `2 * channels * width` values
    /// ordered as `[channel][bin][re, im]`.
    pub bands: Vec<(usize, usize, usize)>,
    pub norm_weights: Vec<Vec<f64>>,
    pub features: usize,
}

impl BandOlaLayout {
    pub fn new(spec: &super::BandSpec, channels: usize) -> Self {
        let mut offset = 0;
        let bands = spec
            .bands
            .iter()
            .map(|b| {
                let entry = (b.start, b.width(), offset);
                offset += 2 * channels * b.width();
                entry
            })
            .collect();
        Self {
            channels,
            bins: spec.bins,
            bands,
            norm_weights: spec.normalized_weights(),
            features: offset,
        }
    }
}

/// Maps `[N, T, K]` band features to a `[N, 2, C, F, T]` mask (real plane then
/// imaginary plane), blending overlapping bands with normalized weights.
pub(crate) struct BandOverlapAdd {
    pub layout: Arc<BandOlaLayout>,
}

impl BandOverlapAdd {
    fn fwd<T: Elem>(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, frames, k) = l.shape().dims3()?;
        let lay = &self.layout;
        if k != lay.features {
            bail!("band overlap-add: expected {} features, got {k}", lay.features);
        }
        let x = contiguous::<T>(s, l)?;
        let (c_n, f_n) = (lay.channels, lay.bins);
        let mut out = vec![T::zero(); batch * 2 * c_n * f_n * frames];
        for n in 0..batch {
            for t in 0..frames {
                let row = &x[(n * frames + t) * k..][..k];
                for (b, &(start, width, offset)) in lay.bands.iter().enumerate() {
                    for c in 0..c_n {
                        for j in 0..width {
                            let w = <T as WithDType>::from_f64(lay.norm_weights[b][j]);
                            for p in 0..2 {
                                let v = row[offset + (c * width + j) * 2 + p];
                                let o = (((n * 2 + p) * c_n + c) * f_n + start + j) * frames + t;
                                out[o] += w * v;
                            }
                        }
                    }
                }
            }
        }
        Ok((
            T::to_cpu_storage_owned(out),
            Shape::from(vec![batch, 2, c_n, f_n, frames]),
        ))
    }

    fn bwd_impl<T: Elem>(&self, arg: &Tensor, grad: &Tensor) -> candle_core::Result<Tensor> {
        let (batch, frames, k) = arg.dims3()?;
        let lay = &self.layout;
        let g = host::<T>(grad)?;
        let (c_n, f_n) = (lay.channels, lay.bins);
        let mut dx = vec![T::zero(); batch * frames * k];
        for n in 0..batch {
            for t in 0..frames {
                let row = &mut dx[(n * frames + t) * k..][..k];
                for (b, &(start, width, offset)) in lay.bands.iter().enumerate() {
                    for c in 0..c_n {
                        for j in 0..width {
                            let w = <T as WithDType>::from_f64(lay.norm_weights[b][j]);
                            for p in 0..2 {
                                let o = (((n * 2 + p) * c_n + c) * f_n + start + j) * frames + t;
                                row[offset + (c * width + j) * 2 + p] = w * g[o];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(dx, (batch, frames, k), arg.device())
    }
}

impl CustomOp1 for BandOverlapAdd {
    fn name(&self) -> &'static str {
        "band-overlap-add"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        match s {
            CpuStorage::F32(_) => self.fwd::<f32>(s, l),
            CpuStorage::F64(_) => self.fwd::<f64>(s, l),
            _ => bail!("band overlap-add supports f32 and f64 only"),
        }
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = match arg.dtype() {
            DType::F32 => self.bwd_impl::<f32>(arg, grad)?,
            DType::F64 => self.bwd_impl::<f64>(arg, grad)?,
            dt => bail!("band overlap-add: unsupported dtype {dt:?}"),
        };
        Ok(Some(g))
    }
}

// ---------------------------------------------------------------------------
// iSTFT synthesis

/// `[N, C, F, T]` real and imaginary parts to `[N, C, length]` waveforms.
pub(crate) struct Synthesis {
    pub config: StftConfig,
    pub length: usize,
}

impl Synthesis {
    fn fwd<T: Elem>(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, channels, bins, frames) = l1.shape().dims4()?;
        if l1.shape() != l2.shape() || bins != self.config.bins() {
            bail!("synthesis: inconsistent spectrogram shapes");
        }
        let re = contiguous::<T>(s1, l1)?;
        let im = contiguous::<T>(s2, l2)?;
        let kernel = StftKernel::<T>::new(self.config);
        let block = bins * frames;
        let mut out = vec![T::zero(); batch * channels * self.length];
        for (i, y) in out.chunks_mut(self.length).enumerate() {
            kernel.synthesize(
                &re[i * block..][..block],
                &im[i * block..][..block],
                frames,
                self.length,
                y,
            );
        }
        Ok((
            T::to_cpu_storage_owned(out),
            Shape::from((batch, channels, self.length)),
        ))
    }

    fn bwd_impl<T: Elem>(&self, re: &Tensor, grad: &Tensor) -> candle_core::Result<(Tensor, Tensor)> {
        let (batch, channels, bins, frames) = re.dims4()?;
        let g = host::<T>(grad)?;
        let kernel = StftKernel::<T>::new(self.config);
        let block = bins * frames;
        let mut d_re = vec![T::zero(); batch * channels * block];
        let mut d_im = vec![T::zero(); batch * channels * block];
        for i in 0..batch * channels {
            kernel.synthesize_adjoint(
                &g[i * self.length..][..self.length],
                frames,
                self.length,
                &mut d_re[i * block..][..block],
                &mut d_im[i * block..][..block],
            );
        }
        let shape = re.shape();
        Ok((
            Tensor::from_vec(d_re, shape, re.device())?,
            Tensor::from_vec(d_im, shape, re.device())?,
        ))
    }
}

impl CustomOp2 for Synthesis {
    fn name(&self) -> &'static str {
        "istft-synthesis"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        match s1 {
            CpuStorage::F32(_) => self.fwd::<f32>(s1, l1, s2, l2),
            CpuStorage::F64(_) => self.fwd::<f64>(s1, l1, s2, l2),
            _ => bail!("synthesis supports f32 and f64 only"),
        }
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        _arg2: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (a, b) = match arg1.dtype() {
            DType::F32 => self.bwd_impl::<f32>(arg1, grad_res)?,
            DType::F64 => self.bwd_impl::<f64>(arg1, grad_res)?,
            dt => bail!("synthesis: unsupported dtype {dt:?}"),
        };
        Ok((Some(a), Some(b)))
    }
}

// ---------------------------------------------------------------------------
// Convenience wrappers

pub(crate) fn gru_scan(gi: &Tensor, packed: &Tensor, hidden: usize, reverse: bool) -> candle_core::Result<Tensor> {
    gi.contiguous()?
        .apply_op2(&packed.contiguous()?, GruScan { hidden, reverse })
}

pub(crate) fn band_overlap_add(x: &Tensor, layout: &Arc<BandOlaLayout>) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(BandOverlapAdd {
        layout: layout.clone(),
    })
}

pub(crate) fn synthesize(re: &Tensor, im: &Tensor, config: StftConfig, length: usize) -> candle_core::Result<Tensor> {
    re.contiguous()?
        .apply_op2(&im.contiguous()?, Synthesis { config, length })
}

/// STFT of `[N, C, len]` waveforms into real and imaginary `[N, C, F, T]` tensors.
/// Inputs are data, so no gradient is tracked.
pub(crate) fn analysis(x: &Tensor, config: StftConfig) -> candle_core::Result<(Tensor, Tensor)> {
    match x.dtype() {
        DType::F32 => analysis_impl::<f32>(x, config),
        DType::F64 => analysis_impl::<f64>(x, config),
        dt => bail!("analysis: unsupported dtype {dt:?}"),
    }
}

fn analysis_impl<T: Elem>(x: &Tensor, config: StftConfig) -> candle_core::Result<(Tensor, Tensor)> {
    let (batch, channels, len) = x.dims3()?;
    if len == 0 {
        bail!("analysis: empty signal");
    }
    let data = host::<T>(&x.detach())?;
    let kernel = StftKernel::<T>::new(config);
    let (bins, frames) = (config.bins(), config.frames(len));
    let block = bins * frames;
    let mut spec = vec![realfft::num_complex::Complex::new(T::zero(), T::zero()); block];
    let mut re = Vec::with_capacity(batch * channels * block);
    let mut im = Vec::with_capacity(batch * channels * block);
    for signal in data.chunks(len) {
        kernel.analyze(signal, frames, &mut spec);
        re.extend(spec.iter().map(|c| c.re));
        im.extend(spec.iter().map(|c| c.im));
    }
    let shape = (batch, channels, bins, frames);
    Ok((
        Tensor::from_vec(re, shape, x.device())?,
        Tensor::from_vec(im, shape, x.device())?,
    ))
}
