#pragma once

#include <stdexcept>
#include <string>

namespace sflc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DeviceTooSmall : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct EmptyPassword : Error {
    EmptyPassword() : Error("empty password") {}
};
struct DuplicatePassword : Error {
    DuplicatePassword() : Error("duplicate password") {}
};
struct SamePassword : Error {
    SamePassword() : Error("new password already unlocks a volume on this device") {}
};
struct NoMatch : Error {
    NoMatch() : Error("no volume matches this password") {}
};
struct Corrupt : Error {
    using Error::Error;
};
struct VolumeNotOpen : Error {
    using Error::Error;
};
struct NotMapped : Error {
    using Error::Error;
};
struct NoSpace : Error {
    NoSpace() : Error("no free physical slice left") {}
};
struct InstanceClosed : Error {
    InstanceClosed() : Error("device instance already closed") {}
};
struct IoError : Error {
    using Error::Error;
};
struct RngFailure : Error {
    RngFailure() : Error("system random generator failed") {}
};
struct SizeMismatch : Error {
    using Error::Error;
};
struct LockHeld : Error {
    using Error::Error;
};

}  // namespace sflc
