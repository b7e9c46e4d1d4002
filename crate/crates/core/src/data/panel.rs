use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::DataError;

/// Calendar month, the holding-period unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u8 {
        self.month
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    /// The month `n` months later (or earlier for negative `n`).
    pub fn offset(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Signed number of months from `self` to `later`.
    pub fn months_until(self, later: YearMonth) -> i64 {
        later.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::BadPeriod(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u8 = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).ok_or_else(bad)
    }
}

/// One stock's record for one month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub close: f64,
    /// Standard deviation of sub-period prices within the month.
    pub vol: f64,
    pub volume: f64,
    pub mcap: f64,
    pub pe: f64,
    pub bm: f64,
    pub div: f64,
}

impl Bar {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("close", self.close),
            ("vol", self.vol),
            ("volume", self.volume),
            ("mcap", self.mcap),
            ("pe", self.pe),
            ("bm", self.bm),
            ("div", self.div),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} is not finite"));
        }
        if self.close <= 0.0 {
            return Err(format!("close must be positive, got {}", self.close));
        }
        if self.vol < 0.0 {
            return Err(format!("vol must be non-negative, got {}", self.vol));
        }
        if self.volume < 0.0 {
            return Err(format!("volume must be non-negative, got {}", self.volume));
        }
        if self.mcap <= 0.0 {
            return Err(format!("mcap must be positive, got {}", self.mcap));
        }
        Ok(())
    }
}

/// Per-stock monthly bars on a gap-free month axis. Absent (stock, month)
/// pairs are masked out rather than imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    start: YearMonth,
    periods: usize,
    stocks: Vec<String>,
    bars: Vec<Vec<Option<Bar>>>,
}

pub const CSV_HEADER: [&str; 9] = [
    "stock_id", "period", "close", "vol", "volume", "mcap", "pe", "bm", "div",
];

impl MarketPanel {
    /// Builds a panel from per-stock series. Stocks are reordered by id.
    pub fn new(
        start: YearMonth,
        periods: usize,
        series: Vec<(String, Vec<Option<Bar>>)>,
    ) -> Result<Self, DataError> {
        if periods == 0 {
            return Err(DataError::Empty);
        }
        let mut series = series;
        series.sort_by(|a, b| a.0.cmp(&b.0));
        for w in series.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DataError::DuplicateStock(w[0].0.clone()));
            }
        }
        for (id, bars) in &series {
            if bars.len() != periods {
                return Err(DataError::Invalid(format!(
                    "stock {id}: {} bars for {periods} periods",
                    bars.len()
                )));
            }
            for (t, bar) in bars.iter().enumerate() {
                if let Some(b) = bar {
                    b.validate().map_err(|reason| {
                        DataError::Invalid(format!("{id} {}: {reason}", start.offset(t as i64)))
                    })?;
                }
            }
        }
        let (stocks, bars) = series.into_iter().unzip();
        Ok(Self {
            start,
            periods,
            stocks,
            bars,
        })
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    pub fn end(&self) -> YearMonth {
        self.start.offset(self.periods as i64 - 1)
    }

    pub fn num_periods(&self) -> usize {
        self.periods
    }

    pub fn num_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stocks
    }

    pub fn period(&self, t: usize) -> YearMonth {
        self.start.offset(t as i64)
    }

    pub fn index_of(&self, period: YearMonth) -> Option<usize> {
        let d = self.start.months_until(period);
        (d >= 0 && (d as usize) < self.periods).then_some(d as usize)
    }

    pub fn bar(&self, stock: usize, t: usize) -> Option<&Bar> {
        self.bars.get(stock)?.get(t)?.as_ref()
    }

    pub fn close(&self, stock: usize, t: usize) -> Option<f64> {
        self.bar(stock, t).map(|b| b.close)
    }

    pub fn is_present(&self, stock: usize, t: usize) -> bool {
        self.bar(stock, t).is_some()
    }

    /// Presence mask indexed `[stock][period]`.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.bars
            .iter()
            .map(|s| s.iter().map(Option::is_some).collect())
            .collect()
    }

    /// Periods `[from, to]` (inclusive) as a new panel.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self, DataError> {
        if from > to || to >= self.periods {
            return Err(DataError::OutOfAxis(format!("[{from}, {to}] of {}", self.periods)));
        }
        Ok(Self {
            start: self.period(from),
            periods: to - from + 1,
            stocks: self.stocks.clone(),
            bars: self.bars.iter().map(|s| s[from..=to].to_vec()).collect(),
        })
    }

    /// Mutable access for tests that need to corrupt or remove data.
    pub fn bar_mut(&mut self, stock: usize, t: usize) -> Option<&mut Option<Bar>> {
        self.bars.get_mut(stock)?.get_mut(t)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| DataError::Malformed { line: 1, reason: e.to_string() })?;
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names != CSV_HEADER {
            return Err(DataError::Malformed {
                line: 1,
                reason: format!("header must be `{}`", CSV_HEADER.join(",")),
            });
        }

        let mut rows: BTreeMap<(String, YearMonth), Bar> = BTreeMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| DataError::Malformed {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let malformed = |reason: String| DataError::Malformed { line, reason };
            if record.len() != CSV_HEADER.len() {
                return Err(malformed(format!("expected 9 fields, got {}", record.len())));
            }
            let id = record[0].trim().to_string();
            if id.is_empty() {
                return Err(malformed("empty stock_id".into()));
            }
            let period: YearMonth = record[1]
                .parse()
                .map_err(|_| malformed(format!("bad period `{}`", &record[1])))?;
            let mut nums = [0.0; 7];
            for (k, slot) in nums.iter_mut().enumerate() {
                let raw = record[k + 2].trim();
                *slot = raw
                    .parse()
                    .map_err(|_| malformed(format!("{} is not a number: `{raw}`", CSV_HEADER[k + 2])))?;
            }
            let bar = Bar {
                close: nums[0],
                vol: nums[1],
                volume: nums[2],
                mcap: nums[3],
                pe: nums[4],
                bm: nums[5],
                div: nums[6],
            };
            bar.validate().map_err(malformed)?;
            if rows.insert((id.clone(), period), bar).is_some() {
                return Err(DataError::Duplicate { line, stock: id, period });
            }
        }

        let first = rows.keys().map(|k| k.1).min().ok_or(DataError::Empty)?;
        let last = rows.keys().map(|k| k.1).max().ok_or(DataError::Empty)?;
        let periods = first.months_until(last) as usize + 1;
        let ids: BTreeSet<String> = rows.keys().map(|k| k.0.clone()).collect();
        let mut series: Vec<(String, Vec<Option<Bar>>)> =
            ids.into_iter().map(|id| (id, vec![None; periods])).collect();
        let mut cursor = 0;
        for ((id, period), bar) in rows {
            while series[cursor].0 != id {
                cursor += 1;
            }
            series[cursor].1[first.months_until(period) as usize] = Some(bar);
        }
        Self::new(first, periods, series)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(CSV_HEADER)?;
        for (id, series) in self.stocks.iter().zip(&self.bars) {
            for (t, bar) in series.iter().enumerate() {
                let Some(b) = bar else { continue };
                let period = self.period(t).to_string();
                let nums = [b.close, b.vol, b.volume, b.mcap, b.pe, b.bm, b.div].map(format_float);
                let mut fields = vec![id.as_str(), period.as_str()];
                fields.extend(nums.iter().map(String::as_str));
                wtr.write_record(&fields)?;
            }
        }
        wtr.flush().map_err(DataError::Io)?;
        Ok(())
    }
}

/// Loads a panel from the `stock_id,period,close,vol,volume,mcap,pe,bm,div` CSV format.
pub fn load_panel(path: &Path) -> Result<MarketPanel, DataError> {
    let file = std::fs::File::open(path)?;
    MarketPanel::read_csv(std::io::BufReader::new(file))
}

pub fn save_panel(panel: &MarketPanel, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    panel.write_csv(std::io::BufWriter::new(file))
}

/// Rounds to 12 significant digits and prints the shortest exact form of the result.
pub fn format_float(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Splits at `train_end`: the training panel covers `[start, train_end]`; the
/// test panel starts `window` months before `train_end + 1`, so its first
/// decision month (`train_end + 1`) has a complete look-back window.
pub fn split(
    panel: &MarketPanel,
    train_end: YearMonth,
    window: usize,
) -> Result<(MarketPanel, MarketPanel), DataError> {
    let te = panel
        .index_of(train_end)
        .filter(|&t| t + 1 < panel.num_periods())
        .ok_or_else(|| {
            DataError::OutOfAxis(format!(
                "train_end {train_end} must lie in [{}, {})",
                panel.start(),
                panel.end()
            ))
        })?;
    let test_from = (te + 1).saturating_sub(window);
    Ok((panel.slice(0, te)?, panel.slice(test_from, panel.num_periods() - 1)?))
}
