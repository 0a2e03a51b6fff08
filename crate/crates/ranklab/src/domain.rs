//! Core data model: users, listings, searches, derived covariates and
//! structural validation of logs.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub const N_AMENITIES: usize = 10;
pub const N_DISTRICTS: usize = 6;

/// x1: price, missing-tenants dummy, number of tenants, 5 district dummies.
pub const X1_DIM: usize = 3 + (N_DISTRICTS - 1);
/// x2: days since published, 3 landlord-match dummies, 10 amenity dummies.
pub const X2_DIM: usize = 4 + N_AMENITIES;

pub const AMENITY_NAMES: [&str; N_AMENITIES] = [
    "ac",
    "balcony",
    "dishwasher",
    "doorman",
    "elevator",
    "exterior_view",
    "heating",
    "smoker_friendly",
    "tv",
    "terrace",
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub age: u32,
    pub female: bool,
    pub student: bool,
    pub worker: bool,
}

impl UserProfile {
    /// Observable user vector Z: [age, female, student, worker].
    pub fn z(&self) -> [f64; 4] {
        [
            self.age as f64,
            self.female as u8 as f64,
            self.student as u8 as f64,
            self.worker as u8 as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupationPref {
    NoStudents,
    StudentsOnly,
}

/// One of six districts; which one is the omitted baseline is dataset config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum District {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl District {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<District> {
        use District::*;
        [D1, D2, D3, D4, D5, D6].get(i).copied()
    }

    pub fn name(self) -> &'static str {
        ["d1", "d2", "d3", "d4", "d5", "d6"][self.index()]
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Amenities {
    pub ac: bool,
    pub balcony: bool,
    pub dishwasher: bool,
    pub doorman: bool,
    pub elevator: bool,
    pub exterior_view: bool,
    pub heating: bool,
    pub smoker_friendly: bool,
    pub tv: bool,
    pub terrace: bool,
}

impl Amenities {
    pub fn as_array(&self) -> [bool; N_AMENITIES] {
        [
            self.ac,
            self.balcony,
            self.dishwasher,
            self.doorman,
            self.elevator,
            self.exterior_view,
            self.heating,
            self.smoker_friendly,
            self.tv,
            self.terrace,
        ]
    }

    pub fn from_array(a: [bool; N_AMENITIES]) -> Amenities {
        Amenities {
            ac: a[0],
            balcony: a[1],
            dishwasher: a[2],
            doorman: a[3],
            elevator: a[4],
            exterior_view: a[5],
            heating: a[6],
            smoker_friendly: a[7],
            tv: a[8],
            terrace: a[9],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Listing {
    pub room_id: String,
    pub price: f64,
    /// Absent means "missing number of tenants"; a missing-indicator dummy
    /// absorbs the level downstream.
    pub n_tenants: Option<u32>,
    pub first_published: NaiveDate,
    pub registered_landlord: bool,
    pub amenities: Amenities,
    pub district: District,
    pub pref_min_age: Option<u32>,
    pub pref_max_age: Option<u32>,
    pub pref_gender: Option<Gender>,
    pub pref_occupation: Option<OccupationPref>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchResultSlot {
    pub room_id: String,
    pub position: u32,
    pub clicked: bool,
    pub requested: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchLog {
    pub search_id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub slots: Vec<SearchResultSlot>,
}

/// Winsorization caps applied when deriving covariates. Stored in dataset
/// metadata so runs are reproducible.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WinsorCaps {
    pub price: f64,
    pub days_since_published: f64,
}

impl WinsorCaps {
    pub fn none() -> WinsorCaps {
        WinsorCaps {
            price: f64::INFINITY,
            days_since_published: f64::INFINITY,
        }
    }
}

/// Covariate triple used by all downstream models.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCovariates {
    pub x1: [f64; X1_DIM],
    pub x2: [f64; X2_DIM],
    pub position: u32,
}

/// Landlord-match dummies. Absent preferences count as a match.
pub fn gender_match(user: &UserProfile, listing: &Listing) -> bool {
    match listing.pref_gender {
        None => true,
        Some(Gender::Female) => user.female,
        Some(Gender::Male) => !user.female,
    }
}

pub fn age_match(user: &UserProfile, listing: &Listing) -> bool {
    let lo_ok = listing.pref_min_age.map_or(true, |lo| user.age >= lo);
    let hi_ok = listing.pref_max_age.map_or(true, |hi| user.age <= hi);
    lo_ok && hi_ok
}

pub fn occupation_match(user: &UserProfile, listing: &Listing) -> bool {
    match listing.pref_occupation {
        None => true,
        Some(OccupationPref::NoStudents) => !user.student,
        Some(OccupationPref::StudentsOnly) => user.student,
    }
}

/// Build the (x1, x2, position) covariate triple for one search-result slot.
///
/// x1 = [price, missing-tenants, n_tenants, 5 non-baseline district dummies];
/// x2 = [days since published, gender match, age match, occupation match,
/// 10 amenity dummies]. Price and days are winsorized at the configured caps.
pub fn derive_covariates(
    user: &UserProfile,
    listing: &Listing,
    search_timestamp: DateTime<Utc>,
    position: u32,
    caps: &WinsorCaps,
    baseline_district: usize,
) -> Result<DerivedCovariates> {
    let days = (search_timestamp.date_naive() - listing.first_published).num_days();
    if days < 0 {
        return Err(Error::Validation(format!(
            "room {} published after search timestamp ({} days)",
            listing.room_id, days
        )));
    }

    let mut x1 = [0.0; X1_DIM];
    x1[0] = listing.price.min(caps.price);
    x1[1] = listing.n_tenants.is_none() as u8 as f64;
    x1[2] = listing.n_tenants.unwrap_or(0) as f64;
    let mut k = 3;
    for d in 0..N_DISTRICTS {
        if d == baseline_district {
            continue;
        }
        x1[k] = (listing.district.index() == d) as u8 as f64;
        k += 1;
    }

    let mut x2 = [0.0; X2_DIM];
    x2[0] = (days as f64).min(caps.days_since_published);
    x2[1] = gender_match(user, listing) as u8 as f64;
    x2[2] = age_match(user, listing) as u8 as f64;
    x2[3] = occupation_match(user, listing) as u8 as f64;
    for (i, a) in listing.amenities.as_array().iter().enumerate() {
        x2[4 + i] = *a as u8 as f64;
    }

    Ok(DerivedCovariates { x1, x2, position })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    DuplicateUserId,
    DuplicateRoomId,
    AgeOutOfRange,
    PrefAgeOrder,
    DanglingUser,
    DanglingRoom,
    EmptySearch,
    DuplicatePosition,
    NonContiguousPositions,
    RequestWithoutClick,
    PageCapacityExceeded,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub context: String,
}

#[derive(Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, context: String) {
        self.violations.push(Violation { kind, context });
    }
}

/// Structural validation of a dataset. Violations are report entries, not
/// aborts; the dataset is valid iff the report is empty.
pub fn validate_dataset(
    users: &[UserProfile],
    listings: &[Listing],
    searches: &[SearchLog],
    page_capacity: usize,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut user_ids = HashSet::new();
    for u in users {
        if !user_ids.insert(u.user_id.as_str()) {
            report.push(ViolationKind::DuplicateUserId, u.user_id.clone());
        }
        if !(16..=99).contains(&u.age) {
            report.push(
                ViolationKind::AgeOutOfRange,
                format!("user {} age {}", u.user_id, u.age),
            );
        }
    }

    let mut room_ids = HashSet::new();
    for l in listings {
        if !room_ids.insert(l.room_id.as_str()) {
            report.push(ViolationKind::DuplicateRoomId, l.room_id.clone());
        }
        if let (Some(lo), Some(hi)) = (l.pref_min_age, l.pref_max_age) {
            if lo > hi {
                report.push(
                    ViolationKind::PrefAgeOrder,
                    format!("room {} pref ages {}..{}", l.room_id, lo, hi),
                );
            }
        }
    }

    for s in searches {
        if !user_ids.contains(s.user_id.as_str()) {
            report.push(
                ViolationKind::DanglingUser,
                format!("search {} user {}", s.search_id, s.user_id),
            );
        }
        if s.slots.is_empty() {
            report.push(ViolationKind::EmptySearch, s.search_id.clone());
            continue;
        }
        if s.slots.len() > page_capacity {
            report.push(
                ViolationKind::PageCapacityExceeded,
                format!("search {} has {} slots", s.search_id, s.slots.len()),
            );
        }
        let mut seen = HashMap::new();
        for slot in &s.slots {
            if !room_ids.contains(slot.room_id.as_str()) {
                report.push(
                    ViolationKind::DanglingRoom,
                    format!("search {} room {}", s.search_id, slot.room_id),
                );
            }
            if let Some(prev) = seen.insert(slot.position, &slot.room_id) {
                report.push(
                    ViolationKind::DuplicatePosition,
                    format!(
                        "search {} position {} ({} and {})",
                        s.search_id, slot.position, prev, slot.room_id
                    ),
                );
            }
            if slot.requested && !slot.clicked {
                report.push(
                    ViolationKind::RequestWithoutClick,
                    format!("search {} room {}", s.search_id, slot.room_id),
                );
            }
        }
        let contiguous = (1..=s.slots.len() as u32).all(|p| seen.contains_key(&p));
        if !contiguous && seen.len() == s.slots.len() {
            report.push(ViolationKind::NonContiguousPositions, s.search_id.clone());
        }
    }

    report
}
