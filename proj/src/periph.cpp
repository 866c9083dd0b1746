#include "mtask/periph.hpp"

#include <algorithm>
#include <stdexcept>

namespace mtask {

PeripheralBus::PeripheralBus(const BoardConfig& cfg)
    : cfg_(cfg), analog_(cfg.analog_pins, 0), digital_(cfg.digital_pins, false)
{
}

bool PeripheralBus::pin_exists(Pin p) const
{
    return p.analog() ? p.index < analog_.size() : p.index < digital_.size();
}

std::int32_t PeripheralBus::read_analog(Pin p) const
{
    if (!p.analog()) return digital_.at(p.index) ? 1023 : 0;
    return analog_.at(p.index);
}

bool PeripheralBus::read_digital(Pin p) const
{
    if (p.analog()) return analog_.at(p.index) >= 512;
    return digital_.at(p.index);
}

void PeripheralBus::write_analog(Pin p, std::int32_t level, std::int64_t now)
{
    level = std::clamp(level, 0, 1023);
    if (p.analog())
        analog_.at(p.index) = level;
    else
        digital_.at(p.index) = level >= 512;
    if (on_write) on_write({now, p, level});
}

void PeripheralBus::write_digital(Pin p, bool level, std::int64_t now)
{
    if (p.analog())
        analog_.at(p.index) = level ? 1023 : 0;
    else
        digital_.at(p.index) = level;
    if (on_write) on_write({now, p, level ? 1 : 0});
}

void PeripheralBus::set_analog(std::uint8_t index, std::int32_t level)
{
    if (level < 0 || level > 1023) throw std::out_of_range("analog level outside 0..1023");
    analog_.at(index) = level;
}

void PeripheralBus::set_digital(std::uint8_t index, bool level)
{
    digital_.at(index) = level;
}

void PeripheralBus::lm_dot(std::int32_t x, std::int32_t y, bool on)
{
    if (x < 0 || x > 7 || y < 0 || y > 7) return;
    auto bit = static_cast<std::uint8_t>(1u << x);
    if (on)
        matrix.frame[y] |= bit;
    else
        matrix.frame[y] &= static_cast<std::uint8_t>(~bit);
}

void PeripheralBus::lm_intensity(std::int32_t level)
{
    matrix.intensity = std::clamp(level, 0, 15);
}

void PeripheralBus::lm_clear()
{
    matrix.frame.fill(0);
}

void PeripheralBus::lm_display()
{
    matrix.displayed = matrix.frame;
}

} // namespace mtask
