//! Regenerates the bundled datasets under data/ from fixed seeds.
//!
//! Both files are synthetic: the outbreak dataset exercises the detection
//! pipeline end to end, and the Italy-shaped dataset mirrors the geometry
//! of the early-2020 hospitalization episode (five regions, one outbreak
//! epicenter) without redistributing any real records.

use std::collections::BTreeMap;
use std::fs::File;

use chrono::NaiveDate;
use sqdi::surveillance::{synthesize_outbreak, write_series_csv};

fn main() -> anyhow::Result<()> {
    let out = std::path::Path::new("data");
    std::fs::create_dir_all(out)?;

    // Generic synthetic outbreak: region "east" turns at day 30.
    let regions = [
        ("north", 10_000u64, 0.0095f64),
        ("south", 15_000, 0.0105),
        ("east", 20_000, 0.0100),
        ("west", 25_000, 0.0090),
        ("central", 30_000, 0.0102),
    ];
    let series = synthesize_outbreak(
        &regions,
        NaiveDate::from_ymd_opt(2020, 2, 1).unwrap(),
        90,
        Some(2),
        30,
        1.25,
        2020,
    )?;
    write_series_csv(&series, File::create(out.join("synthetic_outbreak.csv"))?)?;
    let caps: BTreeMap<&str, u64> = regions.iter().map(|&(r, v, _)| (r, v)).collect();
    std::fs::write(
        out.join("synthetic_capacities.json"),
        serde_json::to_string_pretty(&caps)?,
    )?;

    // Italy-shaped synthetic series: Lombardy is the epicenter from
    // 2020-02-21; the other regions stay at their baseline drift.
    let italy = [
        ("Sicily", 11_000u64, 0.0048f64),
        ("Lazio", 16_000, 0.0060),
        ("Tuscany", 10_500, 0.0055),
        ("Venice", 13_500, 0.0065),
        ("Lombardy", 21_000, 0.0070),
    ];
    let start = NaiveDate::from_ymd_opt(2020, 1, 15).unwrap();
    let outbreak_day = (NaiveDate::from_ymd_opt(2020, 2, 20).unwrap() - start).num_days() as usize;
    let days = (NaiveDate::from_ymd_opt(2020, 4, 30).unwrap() - start).num_days() as usize + 1;
    let series = synthesize_outbreak(&italy, start, days, Some(4), outbreak_day, 1.15, 77)?;
    write_series_csv(&series, File::create(out.join("italy_synthetic.csv"))?)?;
    let caps: BTreeMap<&str, u64> = italy.iter().map(|&(r, v, _)| (r, v)).collect();
    std::fs::write(
        out.join("italy_capacities.json"),
        serde_json::to_string_pretty(&caps)?,
    )?;

    println!("fixtures written to {}", out.display());
    Ok(())
}
