#pragma once

#include "mtask/lang.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace mtask {

struct BoardConfig {
    std::uint8_t analog_pins = 8;
    std::uint8_t digital_pins = 16;
    bool has_dht = true;
    bool has_matrix = true;
    std::uint8_t builtin_led = 2;
    std::uint8_t button_a = 4;
    std::uint8_t button_b = 6;
};

struct MatrixState {
    std::array<std::uint8_t, 8> frame{};      // rows[y], bit x
    std::array<std::uint8_t, 8> displayed{};
    std::int32_t intensity = 0;

    bool lit(int x, int y) const { return (displayed[y] >> x) & 1; }
};

struct PinWrite {
    std::int64_t time;
    Pin pin;
    std::int32_t level;  // 0/1 for digital writes

    bool operator==(const PinWrite&) const = default;
};

// Virtual peripherals behind the basic tasks. Analog levels are 0..1023,
// DHT readings are tenths of a degree / percent.
class PeripheralBus {
public:
    explicit PeripheralBus(const BoardConfig& cfg = {});

    const BoardConfig& config() const { return cfg_; }

    bool pin_exists(Pin p) const;
    std::int32_t read_analog(Pin p) const;
    bool read_digital(Pin p) const;
    void write_analog(Pin p, std::int32_t level, std::int64_t now);
    void write_digital(Pin p, bool level, std::int64_t now);

    // inputs driven from outside, no write log entry
    void set_analog(std::uint8_t index, std::int32_t level);
    void set_digital(std::uint8_t index, bool level);

    std::int32_t temperature = 0;
    std::int32_t humidity = 0;
    MatrixState matrix;

    void lm_dot(std::int32_t x, std::int32_t y, bool on);
    void lm_intensity(std::int32_t level);
    void lm_clear();
    void lm_display();

    const std::vector<std::int32_t>& analog() const { return analog_; }
    const std::vector<bool>& digital() const { return digital_; }

    std::function<void(const PinWrite&)> on_write;

private:
    BoardConfig cfg_;
    std::vector<std::int32_t> analog_;
    std::vector<bool> digital_;
};

} // namespace mtask
