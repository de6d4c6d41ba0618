#pragma once

#include <stdexcept>
#include <string>

namespace blx {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid inputs: bad dimensions, indices, specifications, designs, files.
class spec_error : public error {
 public:
  using error::error;
};

/// A computation produced values outside its guaranteed range.
class numeric_error : public error {
 public:
  using error::error;
};

class dim_mismatch : public spec_error {
 public:
  using spec_error::spec_error;
};

class not_spd : public spec_error {
 public:
  using spec_error::spec_error;
};

class index_out_of_range : public spec_error {
 public:
  using spec_error::spec_error;
};

class zero_prior_variance : public spec_error {
 public:
  using spec_error::spec_error;
};

class infinite_population : public spec_error {
 public:
  using spec_error::spec_error;
};

class cap_exceeded : public spec_error {
 public:
  using spec_error::spec_error;
};

class missing_data : public spec_error {
 public:
  using spec_error::spec_error;
};

class not_applicable : public spec_error {
 public:
  using spec_error::spec_error;
};

class parse_error : public spec_error {
 public:
  using spec_error::spec_error;
};

}  // namespace blx
