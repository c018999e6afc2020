//! Input validation rules for registration, login, and password changes.

use std::sync::LazyLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;

static EMAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}$").unwrap()
});
static PHONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\+?[0-9]{7,15}$").unwrap());
static NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\p{L}][\p{L} .'\-]*$").unwrap());
static DOB: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{2}/\d{2}/\d{4}$").unwrap());

pub const NAME_MAX_CHARS: usize = 100;
pub const PASSWORD_MIN_CHARS: usize = 10;
pub const PASSWORD_MAX_CHARS: usize = 72;
pub const MIN_AGE_YEARS: i32 = 13;
pub const MAX_AGE_YEARS: i32 = 120;

/// Which input failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Name,
    Email,
    Phone,
    Password,
    Dob,
    Identifier,
    Otp,
    MfaType,
    Token,
    Address,
    GroupId,
    MasterId,
    MemberId,
    PermissionId,
    Secret,
    RotationPolicy,
    Catalog,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Name => "name",
            Field::Email => "email",
            Field::Phone => "phone",
            Field::Password => "password",
            Field::Dob => "dob",
            Field::Identifier => "identifier",
            Field::Otp => "otp",
            Field::MfaType => "type",
            Field::Token => "token",
            Field::Address => "address",
            Field::GroupId => "group_id",
            Field::MasterId => "master_id",
            Field::MemberId => "member_id",
            Field::PermissionId => "permission_id",
            Field::Secret => "secret",
            Field::RotationPolicy => "rotation_policy",
            Field::Catalog => "catalog",
        }
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn name(s: &str) -> Result<(), Field> {
    let s = s.trim();
    if s.is_empty() || s.chars().count() > NAME_MAX_CHARS || !NAME.is_match(s) {
        return Err(Field::Name);
    }
    Ok(())
}

pub fn email(s: &str) -> Result<(), Field> {
    if s.len() > 254 || !EMAIL.is_match(s) {
        return Err(Field::Email);
    }
    Ok(())
}

pub fn phone(s: &str) -> Result<(), Field> {
    if !PHONE.is_match(s) {
        return Err(Field::Phone);
    }
    Ok(())
}

/// At least ten characters with an upper, a lower, a digit, and a symbol.
/// Capped at 72 bytes, the most bcrypt reads.
pub fn password(s: &str) -> Result<(), Field> {
    let long_enough = s.chars().count() >= PASSWORD_MIN_CHARS && s.len() <= PASSWORD_MAX_CHARS;
    let upper = s.chars().any(|c| c.is_uppercase());
    let lower = s.chars().any(|c| c.is_lowercase());
    let digit = s.chars().any(|c| c.is_ascii_digit());
    let special = s
        .chars()
        .any(|c| !c.is_alphanumeric() && !c.is_whitespace());
    if long_enough && upper && lower && digit && special {
        Ok(())
    } else {
        Err(Field::Password)
    }
}

/// Parses `dd/mm/yyyy` and checks the age lies in 13..=120 on `today`.
pub fn dob(s: &str, today: NaiveDate) -> Result<NaiveDate, Field> {
    if !DOB.is_match(s) {
        return Err(Field::Dob);
    }
    let date = NaiveDate::parse_from_str(s, "%d/%m/%Y").map_err(|_| Field::Dob)?;
    let age = age_on(date, today).ok_or(Field::Dob)?;
    if (MIN_AGE_YEARS..=MAX_AGE_YEARS).contains(&age) {
        Ok(date)
    } else {
        Err(Field::Dob)
    }
}

fn age_on(born: NaiveDate, today: NaiveDate) -> Option<i32> {
    if born > today {
        return None;
    }
    let mut age = today.year() - born.year();
    if (today.month(), today.day()) < (born.month(), born.day()) {
        age -= 1;
    }
    Some(age)
}

/// Login identifier: an email address or a phone number.
pub fn identifier(s: &str) -> Result<(), Field> {
    if email(s).is_ok() || phone(s).is_ok() {
        Ok(())
    } else {
        Err(Field::Identifier)
    }
}

pub fn normalize_email(s: &str) -> String {
    s.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 5).unwrap()
    }

    #[test]
    fn email_requires_domain_with_tld() {
        assert!(email("user@example.com").is_ok());
        assert!(email("first.last+tag@mail.example.co").is_ok());
        assert_eq!(email("user@example"), Err(Field::Email));
        assert_eq!(email("userexample.com"), Err(Field::Email));
    }

    #[test]
    fn phone_digits_with_optional_country_code() {
        assert!(phone("+919876543210").is_ok());
        assert!(phone("5551234567").is_ok());
        assert!(phone("555-123-4567").is_err());
        assert!(phone("12345").is_err());
    }

    #[test]
    fn password_policy() {
        assert!(password("Str0ng!Passw").is_ok());
        assert_eq!(password("abc"), Err(Field::Password));
        assert!(password("alllowercase1!").is_err());
        assert!(password("NoDigitsHere!!").is_err());
        assert!(password("NoSpecial1234").is_err());
        assert!(password("Sh0rt!a").is_err());
    }

    #[test]
    fn dob_format_and_age_window() {
        assert_eq!(
            dob("31/12/1990", today()),
            Ok(NaiveDate::from_ymd_opt(1990, 12, 31).unwrap())
        );
        assert!(dob("31-12-1990", today()).is_err());
        assert!(dob("1/1/1990", today()).is_err());
        assert!(dob("31/02/1990", today()).is_err());
        // 13th birthday is the day after `today`
        assert!(dob("06/03/2011", today()).is_err());
        assert!(dob("05/03/2011", today()).is_ok());
        assert!(dob("04/03/1903", today()).is_err());
        assert!(dob("01/01/2030", today()).is_err());
    }

    #[test]
    fn names() {
        assert!(name("Ada Lovelace").is_ok());
        assert!(name("O'Brien-Smith").is_ok());
        assert!(name("   ").is_err());
        assert!(name("R2D2").is_err());
        assert!(name(&"a".repeat(101)).is_err());
    }
}
