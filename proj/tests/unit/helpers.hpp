#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "fgiv/errors.hpp"

// Catch matcher asserting that a thrown fgiv::Error carries a specific code.
class ErrcMatcher : public Catch::Matchers::MatcherBase<fgiv::Error> {
 public:
  explicit ErrcMatcher(fgiv::errc expected) : expected_(expected) {}

  bool match(const fgiv::Error& e) const override { return e.code() == expected_; }

  std::string describe() const override {
    return std::string("has error code ") + fgiv::errc_name(expected_);
  }

 private:
  fgiv::errc expected_;
};

inline ErrcMatcher ErrcMatches(fgiv::errc expected) { return ErrcMatcher(expected); }
