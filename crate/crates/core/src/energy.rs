//! Edge energy of conventional versus coded-exposure capture.
//!
//! Energies are in pJ per pixel position over one `T`-slot capture window.
//! Sensing energy splits into an analog part (exposure, paid every slot) and
//! the ADC + MIPI readout part. Conventional capture reads out and transmits
//! every slot; coded capture reads out and transmits once, and pays the
//! pattern-control overhead every slot.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Long-range saving quoted alongside the 7.4 uJ/pixel LoRa figure.
pub const CLAIMED_LONG_RANGE_RATIO: f64 = 15.4;
/// Short-range saving quoted for passive WiFi.
pub const CLAIMED_SHORT_RANGE_RATIO: f64 = 7.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    /// Total sensing energy per pixel readout (pJ).
    pub e_sense: f64,
    /// Fraction of `e_sense` spent in ADC and MIPI.
    pub adc_mipi_fraction: f64,
    /// Pattern-control overhead per pixel per slot (pJ).
    pub e_ce: f64,
    /// Passive WiFi transmission per pixel (pJ).
    pub e_wifi: f64,
    /// LoRa backscatter transmission per pixel (pJ).
    pub e_lora: f64,
    pub slots: u32,
    pub bits_per_pixel: u32,
    /// Bit depth of the coded readout; readout and link energy scale with it.
    pub coded_bits_per_pixel: u32,
    /// Charge `e_ce` once per coded readout instead of once per slot.
    pub ce_per_readout: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            e_sense: 220.0,
            adc_mipi_fraction: 0.956,
            e_ce: 9.0,
            e_wifi: 43.04,
            e_lora: 7.4e6,
            slots: 16,
            bits_per_pixel: 8,
            coded_bits_per_pixel: 8,
            ce_per_readout: false,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let values = [self.e_sense, self.adc_mipi_fraction, self.e_ce, self.e_wifi, self.e_lora];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("energy constants must be finite and non-negative".into()));
        }
        if self.adc_mipi_fraction > 1.0 {
            return Err(Error::InvalidParameter("adc_mipi_fraction must lie in [0, 1]".into()));
        }
        if self.slots == 0 || self.bits_per_pixel == 0 || self.coded_bits_per_pixel == 0 {
            return Err(Error::InvalidParameter("slots and bit depths must be positive".into()));
        }
        Ok(())
    }

    /// Analog (non-ADC) share of sensing, paid every slot.
    pub fn e_analog(&self) -> f64 {
        (1.0 - self.adc_mipi_fraction) * self.e_sense
    }

    /// ADC + MIPI share of sensing, paid per readout.
    pub fn e_readout(&self) -> f64 {
        self.adc_mipi_fraction * self.e_sense
    }

    pub fn link_energy(&self, link: Link) -> f64 {
        match link {
            Link::ShortWifi => self.e_wifi,
            Link::LongLora => self.e_lora,
            Link::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capture {
    Conventional,
    Coded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    ShortWifi,
    LongLora,
    None,
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short-wifi" | "wifi" => Ok(Link::ShortWifi),
            "long-lora" | "lora" => Ok(Link::LongLora),
            "none" => Ok(Link::None),
            other => Err(Error::InvalidParameter(format!("unknown link '{other}'"))),
        }
    }
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::ShortWifi => "short-wifi",
            Link::LongLora => "long-lora",
            Link::None => "none",
        }
    }
}

/// Itemized energy of one capture window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub analog_exposure: f64,
    pub adc_mipi_readout: f64,
    pub ce_control: f64,
    pub wireless: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.analog_exposure + self.adc_mipi_readout + self.ce_control + self.wireless
    }
}

pub fn capture_energy(cfg: &EnergyConfig, capture: Capture, link: Link) -> Result<EnergyBreakdown> {
    cfg.validate()?;
    let t = cfg.slots as f64;
    let e_link = cfg.link_energy(link);
    Ok(match capture {
        Capture::Conventional => EnergyBreakdown {
            analog_exposure: t * cfg.e_analog(),
            adc_mipi_readout: t * cfg.e_readout(),
            ce_control: 0.0,
            wireless: t * e_link,
        },
        Capture::Coded => {
            let depth = cfg.coded_bits_per_pixel as f64 / cfg.bits_per_pixel as f64;
            EnergyBreakdown {
                analog_exposure: t * cfg.e_analog(),
                adc_mipi_readout: depth * cfg.e_readout(),
                ce_control: if cfg.ce_per_readout { cfg.e_ce } else { t * cfg.e_ce },
                wireless: depth * e_link,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub link: Link,
    pub conventional: EnergyBreakdown,
    pub coded: EnergyBreakdown,
    /// `conventional.total() / coded.total()`.
    pub savings_ratio: f64,
}

pub fn edge_energy(cfg: &EnergyConfig, link: Link) -> Result<EnergyReport> {
    let conventional = capture_energy(cfg, Capture::Conventional, link)?;
    let coded = capture_energy(cfg, Capture::Coded, link)?;
    Ok(EnergyReport {
        link,
        conventional,
        coded,
        savings_ratio: conventional.total() / coded.total(),
    })
}

/// Reduction of ADC/MIPI and transmission volume: `T * raw_bits / coded_bits`.
pub fn transmission_reduction(cfg: &EnergyConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.slots as f64 * cfg.bits_per_pixel as f64 / cfg.coded_bits_per_pixel as f64)
}

/// Link energy per pixel that would make the savings ratio equal `ratio`.
/// `None` when no non-negative link cost reaches it.
pub fn link_energy_for_ratio(cfg: &EnergyConfig, ratio: f64) -> Result<Option<f64>> {
    let sense = capture_energy(cfg, Capture::Conventional, Link::None)?.total();
    let coded = capture_energy(cfg, Capture::Coded, Link::None)?.total();
    let t = cfg.slots as f64;
    let depth = cfg.coded_bits_per_pixel as f64 / cfg.bits_per_pixel as f64;
    // ratio * (coded + depth * L) = sense + t * L
    let denom = ratio * depth - t;
    if denom == 0.0 {
        return Ok(None);
    }
    let l = (sense - ratio * coded) / denom;
    Ok((l >= 0.0 && l.is_finite()).then_some(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    ESense,
    AdcMipiFraction,
    ECe,
    EWifi,
    ELora,
    Slots,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "e-sense" => SweepParameter::ESense,
            "adc-mipi-fraction" => SweepParameter::AdcMipiFraction,
            "e-ce" => SweepParameter::ECe,
            "e-wifi" => SweepParameter::EWifi,
            "e-lora" => SweepParameter::ELora,
            "slots" | "T" => SweepParameter::Slots,
            other => return Err(Error::InvalidParameter(format!("unknown sweep parameter '{other}'"))),
        })
    }
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::ESense => "e-sense",
            SweepParameter::AdcMipiFraction => "adc-mipi-fraction",
            SweepParameter::ECe => "e-ce",
            SweepParameter::EWifi => "e-wifi",
            SweepParameter::ELora => "e-lora",
            SweepParameter::Slots => "slots",
        }
    }

    fn apply(self, cfg: &EnergyConfig, value: f64) -> Result<EnergyConfig> {
        let mut out = *cfg;
        match self {
            SweepParameter::ESense => out.e_sense = value,
            SweepParameter::AdcMipiFraction => out.adc_mipi_fraction = value,
            SweepParameter::ECe => out.e_ce = value,
            SweepParameter::EWifi => out.e_wifi = value,
            SweepParameter::ELora => out.e_lora = value,
            SweepParameter::Slots => {
                if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(Error::InvalidParameter(format!("slot count {value} is not a positive integer")));
                }
                out.slots = value as u32;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: EnergyReport,
}

/// One report per value of `parameter`, everything else from `cfg`.
pub fn sweep(cfg: &EnergyConfig, parameter: SweepParameter, values: &[f64], link: Link) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let point = parameter.apply(cfg, value)?;
            Ok(SweepRow {
                value,
                report: edge_energy(&point, link)?,
            })
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str = "parameter,value,link,capture,analog_exposure_pj,adc_mipi_readout_pj,ce_control_pj,wireless_pj,total_pj,savings_ratio";

/// Two CSV lines (conventional, coded) for one report.
pub fn report_csv_rows(parameter: &str, value: f64, report: &EnergyReport) -> String {
    let mut out = String::new();
    for (name, b) in [("conventional", &report.conventional), ("coded", &report.coded)] {
        let _ = writeln!(
            out,
            "{parameter},{value},{},{name},{},{},{},{},{},{}",
            report.link.name(),
            b.analog_exposure,
            b.adc_mipi_readout,
            b.ce_control,
            b.wireless,
            b.total(),
            report.savings_ratio
        );
    }
    out
}

pub fn sweep_csv(parameter: SweepParameter, rows: &[SweepRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&report_csv_rows(parameter.name(), row.value, &row.report));
    }
    out
}

/// Human-readable comparison of short- and long-range scenarios.
pub fn summary(cfg: &EnergyConfig) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "T={} e_sense={} pJ adc_mipi_fraction={} e_ce={} pJ/slot",
        cfg.slots, cfg.e_sense, cfg.adc_mipi_fraction, cfg.e_ce
    );
    let _ = writeln!(out, "transmission reduction: {}x", transmission_reduction(cfg)?);
    for link in [Link::ShortWifi, Link::LongLora, Link::None] {
        let r = edge_energy(cfg, link)?;
        let _ = writeln!(
            out,
            "{:<10} conventional {:>14.2} pJ  coded {:>12.2} pJ  saving {:.2}x",
            link.name(),
            r.conventional.total(),
            r.coded.total(),
            r.savings_ratio
        );
    }
    let long = edge_energy(cfg, Link::LongLora)?;
    let _ = writeln!(
        out,
        "note: long-range saving computes to {:.2}x with e_lora={} pJ/pixel; the quoted figure is {}x",
        long.savings_ratio, cfg.e_lora, CLAIMED_LONG_RANGE_RATIO
    );
    match link_energy_for_ratio(cfg, CLAIMED_LONG_RANGE_RATIO)? {
        Some(l) => {
            let _ = writeln!(
                out,
                "note: {}x corresponds to a link cost of {:.1} pJ/pixel ({:.2} nJ), not {:.2} uJ; the quoted units look inconsistent",
                CLAIMED_LONG_RANGE_RATIO,
                l,
                l / 1e3,
                cfg.e_lora / 1e6
            );
        }
        None => {
            let _ = writeln!(out, "note: no link cost reproduces {}x under this config", CLAIMED_LONG_RANGE_RATIO);
        }
    }
    Ok(out)
}
