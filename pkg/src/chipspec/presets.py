"""Built-in run configurations reproducing the canonical measurement classes.

Values not fixed by the reference apparatus are marked ``# assumed``.
"""

PRESETS: dict[str, str] = {
    "fig2-instant": """\
# Decay run, both lasers switched on synchronously.
trap.omega_x = 17 Hz
trap.omega_r = 240 Hz
trap.bottom_frequency = 6.835 GHz
beams.diode.power = 0.44 mW
beams.diode.duty_cycle = 0.05  # assumed: chopped detection scheme
beams.fiber.power = 1.6 W
beams.fiber.duty_cycle = 0.05  # assumed: chopped detection scheme
cloud.n_phys = 7e5
cloud.n_sim = 20000
cloud.T = 6 uK
protocol.type = decay
protocol.fiber_ramp = instant
protocol.observe_duration = 3 s
protocol.bin_width = 5 ms
protocol.diode_detuning = 35.92 MHz  # assumed: on the highest line, shifted at 1.6 W
protocol.auto_fit = exp
run.seed = 20
run.out_prefix = fig2-instant
""",
    "fig2-ramped": """\
# Decay run after a 1 s linear fiber ramp (adiabatic dimple loading).
trap.omega_x = 17 Hz
trap.omega_r = 240 Hz
trap.bottom_frequency = 6.835 GHz
beams.diode.power = 0.44 mW
beams.diode.duty_cycle = 0.05  # assumed: chopped detection scheme
beams.fiber.power = 1.6 W
beams.fiber.duty_cycle = 0.05  # assumed: chopped detection scheme
cloud.n_phys = 7e5
cloud.n_sim = 20000
cloud.T = 6 uK
protocol.type = decay
protocol.fiber_ramp = linear
protocol.ramp_duration = 1 s
protocol.observe_duration = 3 s
protocol.bin_width = 0.5 ms  # assumed: resolves the fast dimple component
protocol.diode_detuning = 35.92 MHz  # assumed: on the highest line, shifted at 1.6 W
protocol.heating_mode = adiabatic-heuristic
protocol.heating_factor = 4.0  # assumed: post-ramp compression heating
protocol.auto_fit = double-exp
run.seed = 21
run.out_prefix = fig2-ramped
""",
    "fig3-scan": """\
# Two-photon spectrum: 65 MHz sweep of the diode detuning at -45 MHz/s.
trap.omega_x = 17 Hz
trap.omega_r = 240 Hz
trap.bottom_frequency = 6.835 GHz
beams.diode.power = 0.27 mW
beams.diode.duty_cycle = 0.023  # assumed: chopped detection, calibrated to the run statistics
beams.fiber.power = 1.6 W
beams.fiber.duty_cycle = 0.023  # assumed: chopped detection, calibrated to the run statistics
cloud.n_phys = 1.8e6
cloud.n_sim = 20000
cloud.T = 18 uK
protocol.type = optical-scan
protocol.scan_rate = -45 MHz/s
protocol.span = 65 MHz
protocol.start_detuning = 45 MHz
protocol.bin_width = 5 ms
protocol.thermalize_hold = 0 s  # assumed: collisionless model cannot partially load the dimple
protocol.auto_fit = multi-gauss
run.seed = 22
run.out_prefix = fig3-scan
""",
    "fig4-lowpower": """\
# Microwave double-resonance scan at moderate fiber power.
trap.omega_x = 17 Hz
trap.omega_r = 240 Hz
trap.bottom_frequency = 6.835 GHz
beams.diode.power = 0.3 mW
beams.fiber.power = 0.5 W  # assumed: low-power case
cloud.n_phys = 1.8e6
cloud.n_sim = 20000
cloud.T = 18 uK
protocol.type = microwave-scan
protocol.f_start = 6.841 GHz
protocol.f_end = 6.835 GHz
protocol.duration = 320 ms
protocol.rabi_frequency = 23.7 kHz
protocol.bin_width = 1 ms
protocol.axis_origin = 6.8345 GHz  # assumed: display origin
protocol.simulation_mode = analytic
protocol.fiber_ramp = linear
protocol.heating_mode = adiabatic-heuristic
protocol.heating_factor = 1.3  # assumed: post-ramp compression heating
protocol.auto_fit = temperature
run.seed = 23
run.out_prefix = fig4-lowpower
""",
    "fig4-highpower": """\
# Microwave double-resonance scan at full fiber power.
trap.omega_x = 17 Hz
trap.omega_r = 240 Hz
trap.bottom_frequency = 6.835 GHz
beams.diode.power = 0.3 mW
beams.fiber.power = 1.6 W
cloud.n_phys = 1.8e6
cloud.n_sim = 20000
cloud.T = 18 uK
protocol.type = microwave-scan
protocol.f_start = 6.841 GHz
protocol.f_end = 6.835 GHz
protocol.duration = 320 ms
protocol.rabi_frequency = 23.7 kHz
protocol.bin_width = 1 ms
protocol.axis_origin = 6.8345 GHz  # assumed: display origin
protocol.simulation_mode = analytic
protocol.fiber_ramp = linear
protocol.heating_mode = adiabatic-heuristic
protocol.heating_factor = 1.3  # assumed: post-ramp compression heating
protocol.auto_fit = temperature
run.seed = 24
run.out_prefix = fig4-highpower
""",
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from None
