#include "mtask/wire.hpp"

#include "mtask/lang.hpp"

#include <sstream>

namespace mtask::wire {

namespace {

void put16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    put16(out, static_cast<std::uint16_t>(v >> 16));
    put16(out, static_cast<std::uint16_t>(v));
}

struct BadPayload : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Cursor {
    const std::uint8_t* p;
    const std::uint8_t* end;

    std::uint8_t u8()
    {
        if (p == end) throw BadPayload("payload too short");
        return *p++;
    }
    std::uint16_t u16()
    {
        std::uint16_t hi = u8();
        return static_cast<std::uint16_t>(hi << 8 | u8());
    }
    std::uint32_t u32()
    {
        std::uint32_t hi = u16();
        return hi << 16 | u16();
    }
    DynValue value()
    {
        try {
            return get_value(p, end, ValueLayout::Wire);
        } catch (const FormatError& e) {
            throw BadPayload(e.what());
        }
    }
    std::vector<std::uint8_t> rest()
    {
        std::vector<std::uint8_t> out(p, end);
        p = end;
        return out;
    }
};

struct Encoder {
    std::vector<std::uint8_t>& out;

    void operator()(const Hello& m)
    {
        put16(out, m.spec.version);
        put32(out, m.spec.arena_capacity);
        out.push_back(m.spec.analog_pins);
        out.push_back(m.spec.digital_pins);
        out.push_back(static_cast<std::uint8_t>((m.spec.dht ? 1 : 0) | (m.spec.matrix ? 2 : 0)));
    }
    void operator()(const AddTask& m)
    {
        put16(out, m.task);
        out.insert(out.end(), m.image.begin(), m.image.end());
    }
    void operator()(const AckTask& m) { put16(out, m.task); }
    void operator()(const RejectTask& m)
    {
        put16(out, m.task);
        out.insert(out.end(), m.reason.begin(), m.reason.end());
    }
    void operator()(const DelTask& m) { put16(out, m.task); }
    void operator()(const TaskValueMsg& m)
    {
        put16(out, m.task);
        out.push_back(static_cast<std::uint8_t>(m.value.state()));
        if (m.value.has_value()) put_value(out, m.value.value(), ValueLayout::Wire);
    }
    void operator()(const SdsUp& m)
    {
        put16(out, m.task);
        out.push_back(m.sds);
        put_value(out, m.value, ValueLayout::Wire);
    }
    void operator()(const SdsDown& m)
    {
        put16(out, m.task);
        out.push_back(m.sds);
        put_value(out, m.value, ValueLayout::Wire);
    }
    void operator()(const Ping&) {}
    void operator()(const Pong&) {}
    void operator()(const TaskFail& m)
    {
        put16(out, m.task);
        out.push_back(static_cast<std::uint8_t>(m.reason));
    }
};

Message parse_body(Tag tag, Cursor& c)
{
    switch (tag) {
    case Tag::Hello: {
        Hello h;
        h.spec.version = c.u16();
        h.spec.arena_capacity = c.u32();
        h.spec.analog_pins = c.u8();
        h.spec.digital_pins = c.u8();
        std::uint8_t mask = c.u8();
        if (mask & ~3u) throw BadPayload("unknown peripheral bits");
        h.spec.dht = mask & 1;
        h.spec.matrix = mask & 2;
        return h;
    }
    case Tag::AddTask: {
        AddTask m;
        m.task = c.u16();
        m.image = c.rest();
        return m;
    }
    case Tag::AckTask: return AckTask{c.u16()};
    case Tag::RejectTask: {
        RejectTask m;
        m.task = c.u16();
        auto bytes = c.rest();
        m.reason.assign(bytes.begin(), bytes.end());
        return m;
    }
    case Tag::DelTask: return DelTask{c.u16()};
    case Tag::TaskValue: {
        TaskValueMsg m;
        m.task = c.u16();
        std::uint8_t state = c.u8();
        if (state == 0)
            m.value = DynTaskValue::no_value();
        else if (state <= 2)
            m.value = DynTaskValue::of(c.value(), state == 2);
        else
            throw BadPayload("bad task value state");
        return m;
    }
    case Tag::SdsUp: {
        SdsUp m;
        m.task = c.u16();
        m.sds = c.u8();
        m.value = c.value();
        return m;
    }
    case Tag::SdsDown: {
        SdsDown m;
        m.task = c.u16();
        m.sds = c.u8();
        m.value = c.value();
        return m;
    }
    case Tag::Ping: return Ping{};
    case Tag::Pong: return Pong{};
    case Tag::TaskFail: {
        TaskFail m;
        m.task = c.u16();
        std::uint8_t r = c.u8();
        if (r > static_cast<std::uint8_t>(TrapKind::Watchdog)) throw BadPayload("bad trap kind");
        m.reason = static_cast<TrapKind>(r);
        return m;
    }
    }
    throw BadPayload("unreachable");
}

bool known_tag(std::uint8_t t) { return t >= 0x01 && t <= 0x0B; }

} // namespace

Tag tag_of(const Message& m)
{
    static constexpr Tag tags[] = {Tag::Hello,     Tag::AddTask, Tag::AckTask, Tag::RejectTask, Tag::DelTask, Tag::TaskValue,
                                   Tag::SdsUp,     Tag::SdsDown, Tag::Ping,    Tag::Pong,       Tag::TaskFail};
    return tags[m.index()];
}

const char* name_of(Tag t)
{
    switch (t) {
    case Tag::Hello: return "Hello";
    case Tag::AddTask: return "AddTask";
    case Tag::AckTask: return "AckTask";
    case Tag::RejectTask: return "RejectTask";
    case Tag::DelTask: return "DelTask";
    case Tag::TaskValue: return "TaskValue";
    case Tag::SdsUp: return "SdsUp";
    case Tag::SdsDown: return "SdsDown";
    case Tag::Ping: return "Ping";
    case Tag::Pong: return "Pong";
    case Tag::TaskFail: return "TaskFail";
    }
    return "?";
}

std::string describe(const Message& m)
{
    std::ostringstream os;
    os << name_of(tag_of(m));
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Hello>)
                os << " v" << x.spec.version << " arena " << x.spec.arena_capacity << " pins " << int(x.spec.analog_pins) << "/"
                   << int(x.spec.digital_pins) << (x.spec.dht ? " dht" : "") << (x.spec.matrix ? " matrix" : "");
            else if constexpr (std::is_same_v<T, AddTask>)
                os << " " << x.task << " (" << x.image.size() << " bytes)";
            else if constexpr (std::is_same_v<T, RejectTask>)
                os << " " << x.task << " " << x.reason;
            else if constexpr (std::is_same_v<T, TaskValueMsg>)
                os << " " << x.task << " " << to_string(x.value);
            else if constexpr (std::is_same_v<T, SdsUp> || std::is_same_v<T, SdsDown>)
                os << " " << x.task << " s" << int(x.sds) << " " << x.value.to_string();
            else if constexpr (std::is_same_v<T, TaskFail>)
                os << " " << x.task << " " << to_string(x.reason);
            else if constexpr (std::is_same_v<T, AckTask> || std::is_same_v<T, DelTask>)
                os << " " << x.task;
        },
        m);
    return os.str();
}

std::vector<std::uint8_t> frame_encode(const Message& m)
{
    std::vector<std::uint8_t> out{0, 0, static_cast<std::uint8_t>(tag_of(m))};
    std::visit(Encoder{out}, m);
    std::size_t body = out.size() - 2;
    if (body > kMaxBody) throw FrameTooLarge("frame body of " + std::to_string(body) + " bytes");
    out[0] = static_cast<std::uint8_t>(body >> 8);
    out[1] = static_cast<std::uint8_t>(body);
    return out;
}

const char* to_string(DecodeStatus s)
{
    switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::NeedMoreBytes: return "need more bytes";
    case DecodeStatus::BadTag: return "bad tag";
    case DecodeStatus::LengthMismatch: return "length mismatch";
    case DecodeStatus::BadPayload: return "bad payload";
    }
    return "?";
}

Decoded frame_decode(const std::uint8_t* data, std::size_t size)
{
    Decoded d;
    if (size < 2) return d;
    std::size_t len = static_cast<std::size_t>(data[0]) << 8 | data[1];
    if (len == 0) {
        d.status = DecodeStatus::LengthMismatch;
        d.detail = "empty body";
        return d;
    }
    // the tag can be judged as soon as it arrives
    if (size >= 3 && !known_tag(data[2])) {
        d.status = DecodeStatus::BadTag;
        d.detail = "tag " + std::to_string(data[2]);
        return d;
    }
    if (size < 2 + len) return d;
    Cursor c{data + 3, data + 2 + len};
    try {
        Message m = parse_body(static_cast<Tag>(data[2]), c);
        if (c.p != c.end) {
            d.status = DecodeStatus::LengthMismatch;
            d.detail = std::to_string(c.end - c.p) + " trailing bytes";
            return d;
        }
        d.status = DecodeStatus::Ok;
        d.message = std::move(m);
        d.consumed = 2 + len;
    } catch (const BadPayload& e) {
        std::string what = e.what();
        d.status = what == "payload too short" ? DecodeStatus::LengthMismatch : DecodeStatus::BadPayload;
        d.detail = what;
    }
    return d;
}

void FrameReader::feed(const std::uint8_t* data, std::size_t size)
{
    if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ = 0;
    }
    buf_.insert(buf_.end(), data, data + size);
}

std::optional<Message> FrameReader::next()
{
    if (error_) return std::nullopt;
    Decoded d = frame_decode(buf_.data() + pos_, buf_.size() - pos_);
    if (d.status == DecodeStatus::NeedMoreBytes) return std::nullopt;
    if (d.status != DecodeStatus::Ok) {
        error_ = d.status;
        return std::nullopt;
    }
    pos_ += d.consumed;
    return std::move(d.message);
}

DeviceSpec accept_hello(const Message& first, std::uint16_t expected)
{
    const auto* h = std::get_if<Hello>(&first);
    if (!h) throw VersionMismatch(std::string("expected Hello, got ") + name_of(tag_of(first)));
    if (h->spec.version != expected)
        throw VersionMismatch("device speaks version " + std::to_string(h->spec.version) + ", server " + std::to_string(expected));
    return h->spec;
}

void Keepalive::received(std::int64_t now_ms)
{
    last_ = now_ms;
    missed_ = 0;
}

Keepalive::Action Keepalive::poll(std::int64_t now_ms)
{
    if (offline_) return Action::None;
    if (now_ms - last_ < idle_) return Action::None;
    // each silent period either opens a ping or counts one as missed
    if (missed_ >= max_missed_) {
        offline_ = true;
        return Action::Offline;
    }
    ++missed_;
    last_ = now_ms;
    return Action::SendPing;
}

} // namespace mtask::wire
