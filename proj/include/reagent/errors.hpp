// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace reagent
{

class Error: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Raised for non-finite logits, ratios or KL terms. Values are never clamped silently.
class NumericError: public Error
{
  public:
    using Error::Error;
};

/// Invariant violation on construction of a domain value.
class ValidationError: public Error
{
  public:
    using Error::Error;
};

/// Malformed on-disk record. `field()` names the offending field.
class DecodeError: public Error
{
  public:
    DecodeError(std::string field, const std::string& detail):
        Error("decode error in field '" + field + "': " + detail), _field(std::move(field))
    {
    }

    [[nodiscard]] auto field() const noexcept -> const std::string& { return _field; }

  private:
    std::string _field;
};

class ConfigError: public Error
{
  public:
    using Error::Error;
};

} // namespace reagent
