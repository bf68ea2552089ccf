//! Slot- and cycle-level model of the coded-exposure pixel.
//!
//! Each pixel has a photodiode (PD), a floating diffusion (FD) and a one-bit
//! D flip-flop. The DFFs of a tile form a shift register fed by a serial
//! `pattern in` wire. Every exposure slot runs:
//!
//! 1. power up the DFFs and stream the slot's bits in (`M^2` clocks),
//! 2. pulse `pattern reset`: pixels holding 1 clear their PD,
//! 3. power-gate the DFFs (control lines held at 0) while the PD integrates,
//! 4. power up and stream the same bits again (`M^2` clocks),
//! 5. pulse `pattern transfer`: pixels holding 1 move PD charge into the FD,
//! 6. power-gate again.
//!
//! Charge is counted in integer units of `2^-16` full-scale irradiance, so the
//! final FD image can be compared bit-for-bit with the encoder.

use serde::Serialize;

use crate::encoder::CodedImage;
use crate::error::{Error, Result};
use crate::ingest::{Frame, VideoClip};
use crate::patterns::{expand, FullMask, TilePattern};

/// Charge units per unit irradiance.
pub const CHARGE_SCALE: f64 = 65536.0;
/// Pattern stream clock.
pub const DEFAULT_CLOCK_HZ: f64 = 20e6;

pub fn irradiance_to_charge(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * CHARGE_SCALE).round() as u32
}

pub fn charge_to_irradiance(q: u64) -> f64 {
    q as f64 / CHARGE_SCALE
}

/// Snap every value to the charge grid. Values of the result are exact
/// multiples of `2^-16`, so sums of up to `2^21` of them are exact in `f64`.
pub fn charge_quantize_clip(clip: &VideoClip) -> Result<VideoClip> {
    let frames = clip
        .frames()
        .iter()
        .map(|f| f.map(|v| charge_to_irradiance(irradiance_to_charge(v) as u64)))
        .collect::<Result<Vec<Frame>>>()?;
    VideoClip::new(frames)
}

/// A tile's chain of DFFs. `pattern in` feeds DFF 0; DFF `k` feeds `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileShiftRegister {
    dffs: Vec<u8>,
    clock_count: u64,
    powered: bool,
}

impl TileShiftRegister {
    pub fn new(len: usize) -> Self {
        TileShiftRegister {
            dffs: vec![0; len],
            clock_count: 0,
            powered: true,
        }
    }

    pub fn len(&self) -> usize {
        self.dffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dffs.is_empty()
    }

    pub fn clock_count(&self) -> u64 {
        self.clock_count
    }

    pub fn is_powered(&self) -> bool {
        self.powered
    }

    /// One clock edge. Returns the bit shifted out of the last DFF.
    pub fn clock(&mut self, bit_in: u8) -> Result<u8> {
        if !self.powered {
            return Err(Error::Validation("cannot clock a power-gated shift register".into()));
        }
        if bit_in > 1 {
            return Err(Error::Validation(format!("pattern bit {bit_in} is not 0 or 1")));
        }
        let out = self.dffs.last().copied().unwrap_or(bit_in);
        self.dffs.rotate_right(1);
        if let Some(first) = self.dffs.first_mut() {
            *first = bit_in;
        }
        self.clock_count += 1;
        Ok(out)
    }

    /// Clock in `bits` so that afterwards DFF `k` holds `bits[k]`: the bit for
    /// the far end of the chain goes in first.
    pub fn stream_pattern(&mut self, bits: &[u8]) -> Result<()> {
        if bits.len() != self.dffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "shift register of {} DFFs cannot take {} bits",
                self.dffs.len(),
                bits.len()
            )));
        }
        for &b in bits.iter().rev() {
            self.clock(b)?;
        }
        Ok(())
    }

    /// Contents of DFF `k`; `None` while power-gated.
    pub fn bit(&self, k: usize) -> Option<u8> {
        self.powered.then(|| self.dffs[k])
    }

    /// Control level the DFF drives onto M1/M3: 0 while gated.
    fn control(&self, k: usize) -> u8 {
        if self.powered {
            self.dffs[k]
        } else {
            0
        }
    }

    pub fn power_gate(&mut self) {
        self.powered = false;
        self.dffs.iter_mut().for_each(|b| *b = 0);
    }

    pub fn power_up(&mut self) {
        self.powered = true;
    }
}

/// Observable state of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PixelState {
    pub pd_charge: u64,
    pub fd_charge: u64,
    /// DFF contents; `None` while the DFF is power-gated.
    pub dff_bit: Option<u8>,
    pub gated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChargeCaps {
    pub pd_full_well: Option<u64>,
    pub fd_capacity: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SlotEvent {
    PowerUp { cycle: u64 },
    StreamIn { pass: u8, start_cycle: u64, cycles: u64 },
    ResetPulse { cycle: u64, pixels_reset: usize },
    PowerGate { cycle: u64 },
    Integrate { cycle: u64 },
    TransferPulse { cycle: u64, pixels_transferred: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotTrace {
    pub slot: usize,
    pub events: Vec<SlotEvent>,
    /// Pattern-clock cycles spent in this slot (streams plus pulses).
    pub pattern_cycles: u64,
}

/// The pixel array with one shift-register chain per tile.
#[derive(Debug, Clone)]
pub struct PixelArray {
    height: usize,
    width: usize,
    tile: usize,
    pd: Vec<u64>,
    fd: Vec<u64>,
    chains: Vec<TileShiftRegister>,
    caps: ChargeCaps,
    cycle: u64,
    slots_run: usize,
}

impl PixelArray {
    pub fn new(height: usize, width: usize, tile: usize, caps: ChargeCaps) -> Result<Self> {
        if tile == 0 || height == 0 || width == 0 || height % tile != 0 || width % tile != 0 {
            return Err(Error::NotDivisible { height, width, tile });
        }
        let tiles = (height / tile) * (width / tile);
        let mut chains = vec![TileShiftRegister::new(tile * tile); tiles];
        chains.iter_mut().for_each(|c| c.power_gate());
        Ok(PixelArray {
            height,
            width,
            tile,
            pd: vec![0; height * width],
            fd: vec![0; height * width],
            chains,
            caps,
            cycle: 0,
            slots_run: 0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn fd(&self) -> &[u64] {
        &self.fd
    }

    pub fn pd(&self) -> &[u64] {
        &self.pd
    }

    pub fn chains(&self) -> &[TileShiftRegister] {
        &self.chains
    }

    /// Chain index and DFF position for pixel `(i, j)`.
    fn locate(&self, i: usize, j: usize) -> (usize, usize) {
        let m = self.tile;
        let chain = (i / m) * (self.width / m) + j / m;
        (chain, (i % m) * m + j % m)
    }

    pub fn pixel(&self, i: usize, j: usize) -> PixelState {
        let (c, k) = self.locate(i, j);
        let chain = &self.chains[c];
        PixelState {
            pd_charge: self.pd[i * self.width + j],
            fd_charge: self.fd[i * self.width + j],
            dff_bit: chain.bit(k),
            gated: !chain.is_powered(),
        }
    }

    fn power_up(&mut self, events: &mut Vec<SlotEvent>) {
        self.chains.iter_mut().for_each(|c| c.power_up());
        events.push(SlotEvent::PowerUp { cycle: self.cycle });
    }

    fn power_gate(&mut self, events: &mut Vec<SlotEvent>) {
        self.chains.iter_mut().for_each(|c| c.power_gate());
        events.push(SlotEvent::PowerGate { cycle: self.cycle });
    }

    /// Stream each tile's bits into its chain. Chains run concurrently, so the
    /// array clock advances by `M^2` regardless of the number of tiles.
    fn stream(&mut self, slot_bits: &[u8], pass: u8, events: &mut Vec<SlotEvent>) -> Result<()> {
        let m = self.tile;
        let grid_w = self.width / m;
        for (c, chain) in self.chains.iter_mut().enumerate() {
            let (gr, gc) = (c / grid_w, c % grid_w);
            let bits: Vec<u8> = (0..m * m)
                .map(|k| slot_bits[(gr * m + k / m) * self.width + gc * m + k % m])
                .collect();
            chain.stream_pattern(&bits)?;
        }
        let cycles = (m * m) as u64;
        events.push(SlotEvent::StreamIn {
            pass,
            start_cycle: self.cycle,
            cycles,
        });
        self.cycle += cycles;
        Ok(())
    }

    fn control_bits(&self) -> Vec<u8> {
        let mut out = vec![0; self.height * self.width];
        for i in 0..self.height {
            for j in 0..self.width {
                let (c, k) = self.locate(i, j);
                out[i * self.width + j] = self.chains[c].control(k);
            }
        }
        out
    }

    /// Run one exposure slot. `slot_bits` and `irradiance` are `H x W`,
    /// irradiance in charge units.
    pub fn run_slot(&mut self, slot_bits: &[u8], irradiance: &[u32]) -> Result<SlotTrace> {
        let n = self.height * self.width;
        if slot_bits.len() != n || irradiance.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "slot inputs must have {n} entries, got {} bits and {} irradiance values",
                slot_bits.len(),
                irradiance.len()
            )));
        }
        let start = self.cycle;
        let mut events = Vec::with_capacity(10);

        // Phase 1: stream, pattern reset.
        self.power_up(&mut events);
        self.stream(slot_bits, 1, &mut events)?;
        let control = self.control_bits();
        let mut reset = 0;
        for (pd, &b) in self.pd.iter_mut().zip(&control) {
            if b == 1 {
                *pd = 0;
                reset += 1;
            }
        }
        events.push(SlotEvent::ResetPulse {
            cycle: self.cycle,
            pixels_reset: reset,
        });
        self.cycle += 1;
        self.power_gate(&mut events);

        // Phase 2: exposure. The PD integrates whatever its bit.
        events.push(SlotEvent::Integrate { cycle: self.cycle });
        for (pd, &q) in self.pd.iter_mut().zip(irradiance) {
            *pd += q as u64;
            if let Some(cap) = self.caps.pd_full_well {
                *pd = (*pd).min(cap);
            }
        }

        // Phase 3: stream again, pattern transfer.
        self.power_up(&mut events);
        self.stream(slot_bits, 2, &mut events)?;
        let control = self.control_bits();
        let mut moved = 0;
        for ((pd, fd), &b) in self.pd.iter_mut().zip(self.fd.iter_mut()).zip(&control) {
            if b == 1 {
                *fd += *pd;
                if let Some(cap) = self.caps.fd_capacity {
                    *fd = (*fd).min(cap);
                }
                *pd = 0;
                moved += 1;
            }
        }
        events.push(SlotEvent::TransferPulse {
            cycle: self.cycle,
            pixels_transferred: moved,
        });
        self.cycle += 1;
        self.power_gate(&mut events);

        let trace = SlotTrace {
            slot: self.slots_run,
            events,
            pattern_cycles: self.cycle - start,
        };
        self.slots_run += 1;
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    pub slots: usize,
    pub tile: usize,
    pub cycles_per_slot: u64,
    pub total_cycles: u64,
    pub clock_hz: f64,
    pub duration_us: f64,
}

#[derive(Debug, Clone)]
pub struct CaptureResult {
    pub height: usize,
    pub width: usize,
    /// Final FD charge per pixel.
    pub fd: Vec<u64>,
    /// Charge left on the PDs (never transferred).
    pub pd_residual: Vec<u64>,
    pub counts: Vec<u32>,
    pub traces: Vec<SlotTrace>,
    pub timing: TimingReport,
}

impl CaptureResult {
    /// FD image in irradiance units, with the mask's exposure counts.
    pub fn to_coded_image(&self) -> Result<CodedImage> {
        let values = self.fd.iter().map(|&q| charge_to_irradiance(q)).collect();
        CodedImage::new(self.height, self.width, values, self.counts.clone(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwConfig {
    pub clock_hz: f64,
    pub caps: ChargeCaps,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            clock_hz: DEFAULT_CLOCK_HZ,
            caps: ChargeCaps::default(),
        }
    }
}

/// Capture `clip` through the pixel array using a tile-repetitive pattern.
pub fn run_capture(clip: &VideoClip, pattern: &TilePattern, cfg: &HwConfig) -> Result<CaptureResult> {
    if clip.slots() != pattern.slots() {
        return Err(Error::DimensionMismatch(format!(
            "clip has {} slots, pattern has {}",
            clip.slots(),
            pattern.slots()
        )));
    }
    let mask = expand(pattern, clip.height(), clip.width())?;
    run_capture_mask(clip, &mask, pattern.tile(), cfg)
}

/// Capture with an arbitrary per-pixel mask; each tile chain streams its own bits.
pub fn run_capture_mask(clip: &VideoClip, mask: &FullMask, tile: usize, cfg: &HwConfig) -> Result<CaptureResult> {
    let (h, w) = (clip.height(), clip.width());
    if (mask.slots(), mask.height(), mask.width()) != (clip.slots(), h, w) {
        return Err(Error::DimensionMismatch(format!(
            "clip is {}x{h}x{w} but mask is {}x{}x{}",
            clip.slots(),
            mask.slots(),
            mask.height(),
            mask.width()
        )));
    }
    if !(cfg.clock_hz > 0.0) {
        return Err(Error::InvalidParameter("clock frequency must be positive".into()));
    }
    let mut array = PixelArray::new(h, w, tile, cfg.caps)?;
    let mut traces = Vec::with_capacity(clip.slots());
    for t in 0..clip.slots() {
        let irradiance: Vec<u32> = clip.frames()[t].data().iter().map(|&v| irradiance_to_charge(v)).collect();
        traces.push(array.run_slot(mask.slot_plane(t), &irradiance)?);
    }
    let total_cycles = array.cycle();
    let cycles_per_slot = traces.first().map_or(0, |t| t.pattern_cycles);
    Ok(CaptureResult {
        height: h,
        width: w,
        fd: array.fd.clone(),
        pd_residual: array.pd.clone(),
        counts: mask.exposure_count().counts,
        traces,
        timing: TimingReport {
            slots: clip.slots(),
            tile,
            cycles_per_slot,
            total_cycles,
            clock_hz: cfg.clock_hz,
            duration_us: total_cycles as f64 / cfg.clock_hz * 1e6,
        },
    })
}

/// Pattern-control energy over a capture: `slots * e_ce * pixels` (pJ).
pub fn ce_control_energy(traces: &[SlotTrace], e_ce_per_slot: f64, pixels: usize) -> f64 {
    traces.len() as f64 * e_ce_per_slot * pixels as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;
    use crate::energy::{capture_energy, Capture, EnergyConfig, Link};
    use crate::patterns::{long_exposure, random_pattern};

    fn scalar_clip(values: &[f64]) -> VideoClip {
        VideoClip::new(values.iter().map(|&v| Frame::filled(1, 1, v).unwrap()).collect()).unwrap()
    }

    #[test]
    fn shift_register_streaming() {
        let mut r = TileShiftRegister::new(1);
        r.stream_pattern(&[1]).unwrap();
        assert_eq!((r.bit(0), r.clock_count()), (Some(1), 1));

        let bits: Vec<u8> = (0..64).map(|k| ((k * 7) % 3 == 0) as u8).collect();
        let mut r = TileShiftRegister::new(64);
        r.stream_pattern(&bits).unwrap();
        assert_eq!(r.clock_count(), 64);
        let held: Vec<u8> = (0..64).map(|k| r.bit(k).unwrap()).collect();
        assert_eq!(held, bits);
        r.stream_pattern(&bits).unwrap();
        let again: Vec<u8> = (0..64).map(|k| r.bit(k).unwrap()).collect();
        assert_eq!(again, bits);
        assert!(r.stream_pattern(&bits[..10]).is_err());
    }

    #[test]
    fn chain_wiring_passes_bits_down() {
        let mut r = TileShiftRegister::new(3);
        assert_eq!(r.clock(1).unwrap(), 0);
        assert_eq!(r.clock(0).unwrap(), 0);
        assert_eq!(r.clock(0).unwrap(), 0);
        // The first bit has reached the last DFF and leaves on the next edge.
        assert_eq!(r.bit(2), Some(1));
        assert_eq!(r.clock(0).unwrap(), 1);
    }

    #[test]
    fn gated_register_drives_zero() {
        let mut r = TileShiftRegister::new(2);
        r.stream_pattern(&[1, 1]).unwrap();
        r.power_gate();
        assert_eq!(r.bit(0), None);
        assert_eq!(r.control(0), 0);
        assert!(r.clock(1).is_err());
    }

    #[test]
    fn reset_clears_stale_charge() {
        let mut a = PixelArray::new(1, 1, 1, ChargeCaps::default()).unwrap();
        a.run_slot(&[0], &[500]).unwrap();
        assert_eq!(a.pixel(0, 0).pd_charge, 500);
        a.run_slot(&[1], &[70]).unwrap();
        assert_eq!(a.pixel(0, 0).fd_charge, 70);
        assert_eq!(a.pixel(0, 0).pd_charge, 0);
    }

    #[test]
    fn zero_bit_slot_leaves_fd() {
        let mut a = PixelArray::new(1, 1, 1, ChargeCaps::default()).unwrap();
        a.run_slot(&[1], &[10]).unwrap();
        a.run_slot(&[0], &[20]).unwrap();
        let px = a.pixel(0, 0);
        assert_eq!((px.fd_charge, px.pd_charge), (10, 20));
        a.run_slot(&[0], &[5]).unwrap();
        assert_eq!(a.pixel(0, 0).pd_charge, 25);
        assert!(a.pixel(0, 0).gated);
        assert_eq!(a.pixel(0, 0).dff_bit, None);
    }

    #[test]
    fn consecutive_exposed_slots_sum() {
        let mut a = PixelArray::new(1, 1, 1, ChargeCaps::default()).unwrap();
        a.run_slot(&[1], &[123]).unwrap();
        a.run_slot(&[1], &[456]).unwrap();
        assert_eq!(a.pixel(0, 0).fd_charge, 579);
    }

    #[test]
    fn slot_event_order() {
        let mut a = PixelArray::new(2, 2, 2, ChargeCaps::default()).unwrap();
        let trace = a.run_slot(&[1, 0, 0, 1], &[1, 2, 3, 4]).unwrap();
        let kinds: Vec<&str> = trace
            .events
            .iter()
            .map(|e| match e {
                SlotEvent::PowerUp { .. } => "up",
                SlotEvent::StreamIn { .. } => "stream",
                SlotEvent::ResetPulse { .. } => "reset",
                SlotEvent::PowerGate { .. } => "gate",
                SlotEvent::Integrate { .. } => "integrate",
                SlotEvent::TransferPulse { .. } => "transfer",
            })
            .collect();
        assert_eq!(
            kinds,
            ["up", "stream", "reset", "gate", "integrate", "up", "stream", "transfer", "gate"]
        );
        assert_eq!(trace.pattern_cycles, 2 * 4 + 2);
    }

    #[test]
    fn capture_matches_encoder_on_quantized_clip() {
        let frames: Vec<Frame> = (0..6)
            .map(|t| Frame::from_fn(4, 4, |i, j| ((t * 5 + i * 3 + j) % 11) as f64 / 10.0).unwrap())
            .collect();
        let clip = charge_quantize_clip(&VideoClip::new(frames).unwrap()).unwrap();
        let pattern = random_pattern(6, 2, 0.5, 3).unwrap();
        let cap = run_capture(&clip, &pattern, &HwConfig::default()).unwrap();
        let coded = encode(&clip, &expand(&pattern, 4, 4).unwrap()).unwrap();
        assert_eq!(cap.to_coded_image().unwrap(), coded);
    }

    #[test]
    fn all_zero_pattern_never_transfers() {
        let clip = scalar_clip(&[0.25, 0.5, 0.125]);
        let zero = TilePattern::new(3, 1, vec![0, 0, 0]).unwrap();
        let cap = run_capture(&clip, &zero, &HwConfig::default()).unwrap();
        assert_eq!(cap.fd, vec![0]);
        assert_eq!(cap.pd_residual, vec![(0.875 * CHARGE_SCALE) as u64]);
    }

    #[test]
    fn saturation_caps() {
        let clip = scalar_clip(&[1.0, 1.0, 1.0]);
        let cfg = HwConfig {
            caps: ChargeCaps {
                pd_full_well: Some(70_000),
                fd_capacity: Some(100_000),
            },
            ..HwConfig::default()
        };
        let long = long_exposure(3, 1).unwrap();
        let cap = run_capture(&clip, &long, &cfg).unwrap();
        assert_eq!(cap.fd, vec![100_000]);
    }

    #[test]
    fn timing_for_default_geometry() {
        let clip = VideoClip::new(vec![Frame::filled(8, 8, 0.5).unwrap(); 16]).unwrap();
        let cap = run_capture(&clip, &long_exposure(16, 8).unwrap(), &HwConfig::default()).unwrap();
        assert_eq!(cap.timing.cycles_per_slot, 130);
        assert_eq!(cap.timing.total_cycles, 2080);
        assert!((cap.timing.duration_us - 104.0).abs() < 1e-9);
    }

    #[test]
    fn control_energy() {
        let clip = VideoClip::new(vec![Frame::filled(1, 1, 0.5).unwrap(); 16]).unwrap();
        let cap = run_capture(&clip, &long_exposure(16, 1).unwrap(), &HwConfig::default()).unwrap();
        assert_eq!(ce_control_energy(&cap.traces, 9.0, 1), 144.0);
        assert_eq!(ce_control_energy(&cap.traces, 0.0, 1), 0.0);
        let item = capture_energy(&EnergyConfig::default(), Capture::Coded, Link::None)
            .unwrap()
            .ce_control;
        assert_eq!(ce_control_energy(&cap.traces, EnergyConfig::default().e_ce, 1), item);
    }

    #[test]
    fn geometry_errors() {
        let clip = scalar_clip(&[0.1, 0.2]);
        assert!(run_capture(&clip, &long_exposure(3, 1).unwrap(), &HwConfig::default()).is_err());
        let wide = VideoClip::new(vec![Frame::filled(3, 3, 0.1).unwrap()]).unwrap();
        assert!(run_capture(&wide, &long_exposure(1, 2).unwrap(), &HwConfig::default()).is_err());
        let mut a = PixelArray::new(2, 2, 2, ChargeCaps::default()).unwrap();
        assert!(a.run_slot(&[1, 0], &[1, 2, 3, 4]).is_err());
    }
}
