#pragma once

// Framing and message set between server and device.
//
// A frame is a big-endian u16 body length followed by the body: one tag
// byte and the payload. Values use the Wire layout (big-endian, Real as
// f64); AddTask carries the bytecode image as opaque bytes.

#include "mtask/ops.hpp"
#include "mtask/value.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mtask::wire {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxBody = 65535;

enum class Tag : std::uint8_t {
    Hello = 0x01,
    AddTask = 0x02,
    AckTask = 0x03,
    RejectTask = 0x04,
    DelTask = 0x05,
    TaskValue = 0x06,
    SdsUp = 0x07,
    SdsDown = 0x08,
    Ping = 0x09,
    Pong = 0x0A,
    TaskFail = 0x0B,
};

struct DeviceSpec {
    std::uint16_t version = kProtocolVersion;
    std::uint32_t arena_capacity = 0;
    std::uint8_t analog_pins = 0;
    std::uint8_t digital_pins = 0;
    bool dht = false;
    bool matrix = false;

    bool operator==(const DeviceSpec&) const = default;
};

struct Hello {
    DeviceSpec spec;
    bool operator==(const Hello&) const = default;
};
struct AddTask {
    std::uint16_t task = 0;
    std::vector<std::uint8_t> image;
    bool operator==(const AddTask&) const = default;
};
struct AckTask {
    std::uint16_t task = 0;
    bool operator==(const AckTask&) const = default;
};
struct RejectTask {
    std::uint16_t task = 0;
    std::string reason;
    bool operator==(const RejectTask&) const = default;
};
struct DelTask {
    std::uint16_t task = 0;
    bool operator==(const DelTask&) const = default;
};
struct TaskValueMsg {
    std::uint16_t task = 0;
    DynTaskValue value;
    bool operator==(const TaskValueMsg& o) const { return task == o.task && value == o.value; }
};
struct SdsUp {
    std::uint16_t task = 0;
    std::uint8_t sds = 0;
    DynValue value;
    bool operator==(const SdsUp& o) const { return task == o.task && sds == o.sds && value == o.value; }
};
struct SdsDown {
    std::uint16_t task = 0;
    std::uint8_t sds = 0;
    DynValue value;
    bool operator==(const SdsDown& o) const { return task == o.task && sds == o.sds && value == o.value; }
};
struct Ping {
    bool operator==(const Ping&) const = default;
};
struct Pong {
    bool operator==(const Pong&) const = default;
};
struct TaskFail {
    std::uint16_t task = 0;
    TrapKind reason = TrapKind::DivByZero;
    bool operator==(const TaskFail&) const = default;
};

using Message = std::variant<Hello, AddTask, AckTask, RejectTask, DelTask, TaskValueMsg, SdsUp, SdsDown, Ping, Pong, TaskFail>;

Tag tag_of(const Message& m);
const char* name_of(Tag t);
std::string describe(const Message& m);

class FrameTooLarge : public std::length_error {
public:
    using std::length_error::length_error;
};

std::vector<std::uint8_t> frame_encode(const Message& m);

enum class DecodeStatus { Ok, NeedMoreBytes, BadTag, LengthMismatch, BadPayload };

const char* to_string(DecodeStatus s);

struct Decoded {
    DecodeStatus status = DecodeStatus::NeedMoreBytes;
    std::optional<Message> message;
    std::size_t consumed = 0;  // 0 unless Ok
    std::string detail;
};

// Decodes the first frame in [data, data + size). Never throws.
Decoded frame_decode(const std::uint8_t* data, std::size_t size);
inline Decoded frame_decode(const std::vector<std::uint8_t>& bytes) { return frame_decode(bytes.data(), bytes.size()); }

// Incremental reader for a byte stream. After the first framing error the
// reader stays failed: the stream is not resynchronized.
class FrameReader {
public:
    void feed(const std::uint8_t* data, std::size_t size);
    void feed(const std::vector<std::uint8_t>& bytes) { feed(bytes.data(), bytes.size()); }

    // next complete message, if any
    std::optional<Message> next();

    bool failed() const { return error_.has_value(); }
    DecodeStatus error() const { return error_.value_or(DecodeStatus::Ok); }
    std::size_t buffered() const { return buf_.size() - pos_; }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::optional<DecodeStatus> error_;
};

class VersionMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class HandshakeTimeout : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Validates the first message of a fresh connection.
DeviceSpec accept_hello(const Message& first, std::uint16_t expected = kProtocolVersion);

// Ping after 10 s of silence; two unanswered pings mark the peer offline.
class Keepalive {
public:
    enum class Action { None, SendPing, Offline };

    explicit Keepalive(std::int64_t now_ms, std::int64_t idle_ms = 10'000, int max_missed = 2)
        : idle_(idle_ms), max_missed_(max_missed), last_(now_ms) {}

    // any inbound frame counts as a sign of life
    void received(std::int64_t now_ms);
    Action poll(std::int64_t now_ms);

    int missed() const { return missed_; }
    bool offline() const { return offline_; }

private:
    std::int64_t idle_;
    int max_missed_;
    std::int64_t last_;
    int missed_ = 0;
    bool offline_ = false;
};

} // namespace mtask::wire
