//! The UserVisits row and its on-page encoding: fields in schema order,
//! strings as a u16 length followed by UTF-8 bytes, integers and floats
//! little-endian, the visit date as i32 days since 0001-01-01.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::EngineError;

pub const SOURCE_IP_MAX: usize = 16;
pub const DEST_URL_MAX: usize = 100;
pub const USER_AGENT_MAX: usize = 64;
pub const COUNTRY_CODE_MAX: usize = 3;
pub const LANGUAGE_CODE_MAX: usize = 6;
pub const SEARCH_WORD_MAX: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserVisitsRecord {
    pub source_ip: String,
    pub dest_url: String,
    pub visit_date: NaiveDate,
    pub ad_revenue: f32,
    pub user_agent: String,
    pub country_code: String,
    pub language_code: String,
    pub search_word: String,
    pub duration: i32,
}

pub(crate) fn check_len(field: &'static str, value: &str, max: usize) -> Result<(), EngineError> {
    if value.len() > max {
        return Err(EngineError::ValueTooLong {
            field,
            len: value.len(),
            max,
        });
    }
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EngineError> {
        let end = self.at + n;
        let bytes = self
            .buf
            .get(self.at..end)
            .ok_or_else(|| EngineError::Corrupt(format!("record truncated at byte {}", self.at)))?;
        self.at = end;
        Ok(bytes)
    }

    fn four(&mut self) -> Result<[u8; 4], EngineError> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    fn string(&mut self) -> Result<String, EngineError> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| EngineError::Corrupt(e.to_string()))
    }
}

impl UserVisitsRecord {
    /// Field length bounds, in bytes.
    pub fn validate(&self) -> Result<(), EngineError> {
        check_len("sourceIP", &self.source_ip, SOURCE_IP_MAX)?;
        check_len("destURL", &self.dest_url, DEST_URL_MAX)?;
        check_len("userAgent", &self.user_agent, USER_AGENT_MAX)?;
        check_len("countryCode", &self.country_code, COUNTRY_CODE_MAX)?;
        check_len("languageCode", &self.language_code, LANGUAGE_CODE_MAX)?;
        check_len("searchWord", &self.search_word, SEARCH_WORD_MAX)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.dest_url.len() + self.user_agent.len());
        put_str(&mut out, &self.source_ip);
        put_str(&mut out, &self.dest_url);
        out.extend_from_slice(&self.visit_date.num_days_from_ce().to_le_bytes());
        out.extend_from_slice(&self.ad_revenue.to_le_bytes());
        put_str(&mut out, &self.user_agent);
        put_str(&mut out, &self.country_code);
        put_str(&mut out, &self.language_code);
        put_str(&mut out, &self.search_word);
        out.extend_from_slice(&self.duration.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, EngineError> {
        let mut r = Reader { buf, at: 0 };
        let source_ip = r.string()?;
        let dest_url = r.string()?;
        let days = i32::from_le_bytes(r.four()?);
        let visit_date = NaiveDate::from_num_days_from_ce_opt(days)
            .ok_or_else(|| EngineError::Corrupt(format!("day number {days}")))?;
        let ad_revenue = f32::from_le_bytes(r.four()?);
        let user_agent = r.string()?;
        let country_code = r.string()?;
        let language_code = r.string()?;
        let search_word = r.string()?;
        let duration = i32::from_le_bytes(r.four()?);
        if r.at != buf.len() {
            return Err(EngineError::Corrupt(format!(
                "{} trailing record bytes",
                buf.len() - r.at
            )));
        }
        Ok(Self {
            source_ip,
            dest_url,
            visit_date,
            ad_revenue,
            user_agent,
            country_code,
            language_code,
            search_word,
            duration,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> UserVisitsRecord {
        UserVisitsRecord {
            source_ip: "160.110.44.44".into(),
            dest_url: "http://example.org/a".into(),
            visit_date: NaiveDate::from_ymd_opt(2009, 6, 1).unwrap(),
            ad_revenue: 0.25,
            user_agent: "Mozilla/5.0".into(),
            country_code: "KOR".into(),
            language_code: "ko-KR".into(),
            search_word: "dfs".into(),
            duration: 7,
        }
    }

    #[test]
    fn encoding_is_fixed() {
        let bytes = sample().encode();
        assert_eq!(&bytes[0..2], &13u16.to_le_bytes());
        assert_eq!(&bytes[2..15], b"160.110.44.44");
        let date_at = 15 + 2 + 20;
        let days = NaiveDate::from_ymd_opt(2009, 6, 1).unwrap().num_days_from_ce();
        assert_eq!(&bytes[date_at..date_at + 4], &days.to_le_bytes());
        assert_eq!(&bytes[date_at + 4..date_at + 8], &0.25f32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &7i32.to_le_bytes());
        assert_eq!(UserVisitsRecord::decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn bounds_are_enforced() {
        let mut r = sample();
        r.country_code = "ABCD".into();
        assert!(matches!(
            r.validate(),
            Err(EngineError::ValueTooLong {
                field: "countryCode",
                len: 4,
                max: 3
            })
        ));
        r.country_code = "ABC".into();
        r.source_ip = "1".repeat(17);
        assert!(r.validate().is_err());
    }

    #[test]
    fn truncated_input_is_corrupt() {
        let bytes = sample().encode();
        assert!(UserVisitsRecord::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
