#pragma once

#include <stdexcept>
#include <string>

namespace dukf {

/// Base class for all library errors.  Everything thrown on purpose by this
/// library derives from Error, so callers can catch one type at the boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A matrix that should have been factorizable (symmetric positive
/// semi-definite) was not, even after the jitter retry ladder.
class NotFactorizable : public Error {
 public:
  explicit NotFactorizable(const std::string& msg) : Error(msg) {}
};

/// An iterative routine ran out of its iteration budget.
class NoConvergence : public Error {
 public:
  explicit NoConvergence(const std::string& msg) : Error(msg) {}
};

/// Sigma-point scaling parameters that make the weight set degenerate
/// (n + kappa must be strictly positive).
class InvalidScaling : public Error {
 public:
  explicit InvalidScaling(const std::string& msg) : Error(msg) {}
};

/// Innovation covariance lost positive definiteness and could not be used.
class SingularInnovation : public Error {
 public:
  explicit SingularInnovation(const std::string& msg) : Error(msg) {}
};

/// A measurement-noise covariance required to be invertible was singular.
class SingularR : public Error {
 public:
  explicit SingularR(const std::string& msg) : Error(msg) {}
};

/// A state covariance required to be invertible was singular.
class SingularCovariance : public Error {
 public:
  explicit SingularCovariance(const std::string& msg) : Error(msg) {}
};

/// Root bracketing failed: the requested value is outside the achievable
/// range of the monotone map being inverted.
class NoBracket : public Error {
 public:
  explicit NoBracket(const std::string& msg) : Error(msg) {}
};

/// Analytic bound constants that do not define a valid (positive, ordered)
/// band.
class InvalidBounds : public Error {
 public:
  explicit InvalidBounds(const std::string& msg) : Error(msg) {}
};

/// Scenario configuration rejected by validation.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Re-throw the in-flight exception with `ctx` prepended to its message,
/// preserving the concrete library error type.  Call only from a catch
/// block.
[[noreturn]] inline void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const NotFactorizable& e) { throw NotFactorizable(ctx + e.what());
  } catch (const NoConvergence& e)   { throw NoConvergence(ctx + e.what());
  } catch (const InvalidScaling& e)  { throw InvalidScaling(ctx + e.what());
  } catch (const SingularInnovation& e) {
    throw SingularInnovation(ctx + e.what());
  } catch (const SingularR& e)       { throw SingularR(ctx + e.what());
  } catch (const SingularCovariance& e) {
    throw SingularCovariance(ctx + e.what());
  } catch (const NoBracket& e)       { throw NoBracket(ctx + e.what());
  } catch (const InvalidBounds& e)   { throw InvalidBounds(ctx + e.what());
  } catch (const ConfigError& e)     { throw ConfigError(ctx + e.what());
  } catch (const Error& e)           { throw Error(ctx + e.what());
  } catch (const std::exception& e)  { throw Error(ctx + e.what());
  }
}

}  // namespace dukf
