//! Seeded UserVisits data.
//!
//! Rows come out sorted by visitDate, the table's clustering order. Probe rows
//! are planted as one contiguous burst (a single visitor with many visits in
//! a short window), so they share a handful of heap pages.

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::UserVisitsRecord;

pub const DEFAULT_PROBE_KEY: &str = "160.110.44.44";
pub const DEFAULT_PROBE_COUNT: u64 = 70;

const WORDS: &[&str] = &[
    "alpha", "bravo", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper", "kestrel", "lumen",
    "meadow", "nectar", "orchid", "prairie", "quartz", "raven", "sierra", "tundra", "umber", "velvet", "willow",
    "xenon", "yarrow", "zephyr",
];

const AGENTS: &[&str] = &[
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64)",
    "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7)",
    "Opera/9.80 (Windows NT 6.1; U; en) Presto/2.10.229",
    "Mozilla/4.0 (compatible; MSIE 8.0; Windows NT 5.1)",
    "curl/7.68.0",
    "Googlebot/2.1 (+http://www.google.com/bot.html)",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 16_0 like Mac OS X)",
];

const LOCALES: &[(&str, &str)] = &[
    ("USA", "en-US"),
    ("KOR", "ko-KR"),
    ("JPN", "ja-JP"),
    ("DEU", "de-DE"),
    ("FRA", "fr-FR"),
    ("GBR", "en-GB"),
    ("CHN", "zh-CN"),
    ("BRA", "pt-BR"),
    ("IND", "hi-IN"),
    ("CAN", "en-CA"),
];

/// First day of generated visit dates.
pub fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap()
}

/// Span of generated visit dates in days.
pub const DATE_SPAN_DAYS: u64 = 3650;

pub struct RowGenerator {
    rng: ChaCha8Rng,
    avoid: String,
}

impl RowGenerator {
    /// `avoid` is a sourceIP random rows must never take.
    pub fn new(seed: u64, avoid: &str) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            avoid: avoid.to_owned(),
        }
    }

    fn word(&mut self) -> &'static str {
        WORDS.choose(&mut self.rng).unwrap()
    }

    fn ip(&mut self) -> String {
        loop {
            let ip = format!(
                "{}.{}.{}.{}",
                self.rng.gen_range(1..=254),
                self.rng.gen_range(0..=255),
                self.rng.gen_range(0..=255),
                self.rng.gen_range(1..=254)
            );
            if ip != self.avoid {
                return ip;
            }
        }
    }

    pub fn row(&mut self, visit_date: NaiveDate) -> UserVisitsRecord {
        let host = self.word();
        let n: u32 = self.rng.gen_range(0..10_000);
        let depth = self.rng.gen_range(1..=3);
        let path: Vec<&str> = (0..depth).map(|_| self.word()).collect();
        let (country, language) = *LOCALES.choose(&mut self.rng).unwrap();
        let search_word = format!("{}{}", self.word(), self.rng.gen_range(0..100));
        UserVisitsRecord {
            source_ip: self.ip(),
            dest_url: format!("http://www.{host}{n}.com/{}.html", path.join("/")),
            visit_date,
            ad_revenue: (self.rng.gen_range(0.0f32..1000.0) * 100.0).round() / 100.0,
            user_agent: AGENTS.choose(&mut self.rng).unwrap().to_string(),
            country_code: country.to_owned(),
            language_code: language.to_owned(),
            search_word,
            duration: self.rng.gen_range(1..=3600),
        }
    }

    /// `count` rows with dates drawn from `span_days` days after `from`,
    /// sorted by date.
    pub fn rows(&mut self, count: u64, from: NaiveDate, span_days: u64) -> Vec<UserVisitsRecord> {
        let mut dates: Vec<u64> = (0..count).map(|_| self.rng.gen_range(0..span_days)).collect();
        dates.sort_unstable();
        dates.into_iter().map(|d| self.row(from + Days::new(d))).collect()
    }

    /// Chooses where a burst of `len` rows starts among `total`.
    pub fn burst_start(&mut self, total: u64, len: u64) -> u64 {
        self.rng.gen_range(0..=total - len)
    }
}

/// The table contents for `num_tuples` rows, exactly `probe_count` of which
/// carry `probe_key`. Panics if `probe_count > num_tuples`.
pub fn generate_rows(num_tuples: u64, seed: u64, probe_key: &str, probe_count: u64) -> Vec<UserVisitsRecord> {
    assert!(probe_count <= num_tuples, "more probe rows than rows");
    let mut g = RowGenerator::new(seed, probe_key);
    let mut rows = g.rows(num_tuples, base_date(), DATE_SPAN_DAYS);
    if probe_count > 0 {
        let start = g.burst_start(num_tuples, probe_count) as usize;
        for row in &mut rows[start..start + probe_count as usize] {
            row.source_ip = probe_key.to_owned();
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_sorted_and_planted() {
        let a = generate_rows(2000, 7, DEFAULT_PROBE_KEY, 70);
        let b = generate_rows(2000, 7, DEFAULT_PROBE_KEY, 70);
        assert_eq!(a, b);
        assert_ne!(a, generate_rows(2000, 8, DEFAULT_PROBE_KEY, 70));
        assert!(a.windows(2).all(|w| w[0].visit_date <= w[1].visit_date));
        let hits: Vec<usize> = (0..a.len()).filter(|&i| a[i].source_ip == DEFAULT_PROBE_KEY).collect();
        assert_eq!(hits.len(), 70);
        assert_eq!(hits[69] - hits[0], 69);
        assert!(a.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn zero_rows() {
        assert!(generate_rows(0, 1, DEFAULT_PROBE_KEY, 0).is_empty());
    }
}
