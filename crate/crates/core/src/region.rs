//! Region rosters used to validate respondent locations.

use serde::{Deserialize, Serialize};

/// Country of a survey sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Country {
    US,
    CN,
    DE,
    #[serde(rename = "other")]
    Other,
}

impl Country {
    pub fn code(self) -> &'static str {
        match self {
            Country::US => "US",
            Country::CN => "CN",
            Country::DE => "DE",
            Country::Other => "other",
        }
    }

    /// Nationality adjective used in the persona text.
    pub fn demonym(self) -> Option<&'static str> {
        match self {
            Country::US => Some("American"),
            Country::CN => Some("Chinese"),
            _ => None,
        }
    }

    /// Place name used in the survey introduction ("the people in ...").
    pub fn homeland(self) -> Option<&'static str> {
        match self {
            Country::US => Some("America"),
            Country::CN => Some("China"),
            _ => None,
        }
    }
}

impl std::str::FromStr for Country {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "US" | "USA" => Ok(Country::US),
            "CN" | "CHN" => Ok(Country::CN),
            "DE" | "DEU" => Ok(Country::DE),
            "OTHER" => Ok(Country::Other),
            other => Err(format!("unknown country `{other}`")),
        }
    }
}

/// (name, postal code) for the 50 states and DC.
pub const US_STATES: [(&str, &str); 51] = [
    ("Alabama", "AL"),
    ("Alaska", "AK"),
    ("Arizona", "AZ"),
    ("Arkansas", "AR"),
    ("California", "CA"),
    ("Colorado", "CO"),
    ("Connecticut", "CT"),
    ("Delaware", "DE"),
    ("District of Columbia", "DC"),
    ("Florida", "FL"),
    ("Georgia", "GA"),
    ("Hawaii", "HI"),
    ("Idaho", "ID"),
    ("Illinois", "IL"),
    ("Indiana", "IN"),
    ("Iowa", "IA"),
    ("Kansas", "KS"),
    ("Kentucky", "KY"),
    ("Louisiana", "LA"),
    ("Maine", "ME"),
    ("Maryland", "MD"),
    ("Massachusetts", "MA"),
    ("Michigan", "MI"),
    ("Minnesota", "MN"),
    ("Mississippi", "MS"),
    ("Missouri", "MO"),
    ("Montana", "MT"),
    ("Nebraska", "NE"),
    ("Nevada", "NV"),
    ("New Hampshire", "NH"),
    ("New Jersey", "NJ"),
    ("New Mexico", "NM"),
    ("New York", "NY"),
    ("North Carolina", "NC"),
    ("North Dakota", "ND"),
    ("Ohio", "OH"),
    ("Oklahoma", "OK"),
    ("Oregon", "OR"),
    ("Pennsylvania", "PA"),
    ("Rhode Island", "RI"),
    ("South Carolina", "SC"),
    ("South Dakota", "SD"),
    ("Tennessee", "TN"),
    ("Texas", "TX"),
    ("Utah", "UT"),
    ("Vermont", "VT"),
    ("Virginia", "VA"),
    ("Washington", "WA"),
    ("West Virginia", "WV"),
    ("Wisconsin", "WI"),
    ("Wyoming", "WY"),
];

/// Mainland province-level divisions.
pub const CN_PROVINCES: [&str; 31] = [
    "Anhui",
    "Beijing",
    "Chongqing",
    "Fujian",
    "Gansu",
    "Guangdong",
    "Guangxi",
    "Guizhou",
    "Hainan",
    "Hebei",
    "Heilongjiang",
    "Henan",
    "Hubei",
    "Hunan",
    "Inner Mongolia",
    "Jiangsu",
    "Jiangxi",
    "Jilin",
    "Liaoning",
    "Ningxia",
    "Qinghai",
    "Shaanxi",
    "Shandong",
    "Shanghai",
    "Shanxi",
    "Sichuan",
    "Tianjin",
    "Tibet",
    "Xinjiang",
    "Yunnan",
    "Zhejiang",
];

/// Canonical U.S. state name for a full name, postal code or common DC alias.
pub fn canonical_us_state(raw: &str) -> Option<&'static str> {
    let t = raw.trim();
    if matches!(
        t.to_ascii_lowercase().as_str(),
        "washington dc" | "washington d.c." | "d.c." | "dc" | "district of columbia"
    ) {
        return Some("District of Columbia");
    }
    US_STATES
        .iter()
        .find(|(name, code)| name.eq_ignore_ascii_case(t) || code.eq_ignore_ascii_case(t))
        .map(|(name, _)| *name)
}

pub fn canonical_cn_province(raw: &str) -> Option<&'static str> {
    let t = raw.trim();
    CN_PROVINCES.iter().copied().find(|p| p.eq_ignore_ascii_case(t))
}

/// Validates `raw` against the region list for `country`, returning the
/// canonical spelling. Countries without a configured list accept any
/// non-empty string.
pub fn canonical_region(country: Country, raw: &str) -> Option<String> {
    match country {
        Country::US => canonical_us_state(raw).map(str::to_string),
        Country::CN => canonical_cn_province(raw).map(str::to_string),
        _ => {
            let t = raw.trim();
            (!t.is_empty()).then(|| t.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_aliases() {
        assert_eq!(canonical_us_state("wi"), Some("Wisconsin"));
        assert_eq!(canonical_us_state("Washington DC"), Some("District of Columbia"));
        assert_eq!(canonical_us_state("Washington"), Some("Washington"));
        assert_eq!(canonical_us_state("Ontario"), None);
    }

    #[test]
    fn province_lookup_is_case_insensitive() {
        assert_eq!(canonical_cn_province("sichuan"), Some("Sichuan"));
        assert!(canonical_region(Country::CN, "Ohio").is_none());
        assert_eq!(canonical_region(Country::DE, " Bayern "), Some("Bayern".into()));
    }
}
