# plots.py
"""Static altair charts for the CLI outputs, saved as SVG (vl-convert backend)."""
import logging
from pathlib import Path

import altair as alt
import numpy as np
import pandas as pd

import artifacts
from jointspectrum import JointSpectrum, PuritySweep, spectrum_frame
from setdata import OverlapReport

log = logging.getLogger(__name__)

MAX_HEATMAP_SIDE = 96

alt.data_transformers.disable_max_rows()


def _spectra_theme():
    ink = "#1F2937"
    return {
        "config": {
            "view": {"stroke": None, "continuousWidth": 360, "continuousHeight": 300},
            "axis": {"domain": False, "grid": True, "gridColor": "#EEF2F7", "tickColor": "#D1D5DB",
                     "labelColor": ink, "titleColor": ink, "titleFontWeight": "normal"},
            "legend": {"labelColor": ink, "titleColor": ink, "gradientLength": 220},
            "font": "system-ui",
            "range": {"category": ["#2563EB", "#DC2626", "#059669", "#7C3AED"], "heatmap": {"scheme": "viridis"}},
        }
    }


alt.themes.register("xfwm", _spectra_theme)
alt.themes.enable("xfwm")


def save_chart(chart: alt.TopLevelMixin, path) -> Path | None:
    """Write ``chart`` as SVG; a missing renderer only costs the plot."""
    path = Path(path)
    try:
        with artifacts.atomic_path(path, suffix=".svg") as tmp:
            chart.save(str(tmp), format="svg")
    except Exception as exc:
        log.warning("Skipping plot %s: %s", path.name, exc)
        return None
    log.info("Wrote plot %s", path)
    return path


def contour_chart(frame: pd.DataFrame) -> alt.Chart:
    long = frame.melt(id_vars=["pump_nm"], value_vars=["signal_nm", "idler_nm"],
                      var_name="photon", value_name="wavelength_nm")
    long["photon"] = long["photon"].str.replace("_nm", "", regex=False)
    return alt.Chart(long).mark_point(size=12, filled=True).encode(
        x=alt.X("pump_nm:Q", title="Pump wavelength (nm)", scale=alt.Scale(zero=False)),
        y=alt.Y("wavelength_nm:Q", title="Phase-matched wavelength (nm)", scale=alt.Scale(zero=False)),
        color=alt.Color("photon:N", title=None),
    ).properties(width=420, height=320, title="Phase-matching contours")


def _thin(js: JointSpectrum) -> JointSpectrum:
    step_s = max(1, int(np.ceil(js.signal_axis.size / MAX_HEATMAP_SIDE)))
    step_i = max(1, int(np.ceil(js.idler_axis.size / MAX_HEATMAP_SIDE)))
    return js.with_values(js.values[::step_s, ::step_i], signal_axis=js.signal_axis[::step_s],
                          idler_axis=js.idler_axis[::step_i])


def jsi_heatmap(js: JointSpectrum, title: str = "Joint spectral intensity") -> alt.Chart:
    df = spectrum_frame(_thin(js))
    df["intensity"] = df["value"] ** 2 if "phase" in df else df["value"]
    df["intensity"] = df["intensity"] / df["intensity"].max()
    return alt.Chart(df).mark_rect().encode(
        x=alt.X("signal_nm:O", title="Signal (nm)", axis=alt.Axis(format=".2f", labelOverlap=True)),
        y=alt.Y("idler_nm:O", title="Idler (nm)", sort="descending",
                axis=alt.Axis(format=".2f", labelOverlap=True)),
        color=alt.Color("intensity:Q", title="JSI", scale=alt.Scale(scheme="viridis", domain=[0, 1])),
    ).properties(width=360, height=360, title=title)


def purity_map(sweep: PuritySweep) -> alt.Chart:
    df = sweep.to_frame().reset_index().melt(id_vars=["length_cm"], var_name="bandwidth_nm",
                                             value_name="purity")
    df["bandwidth_nm"] = df["bandwidth_nm"].astype(float)
    return alt.Chart(df.dropna()).mark_rect().encode(
        x=alt.X("length_cm:O", title="Fiber length (cm)"),
        y=alt.Y("bandwidth_nm:O", title=f"Pump bandwidth ({sweep.bandwidth_kind.value})", sort="descending"),
        color=alt.Color("purity:Q", title="Purity", scale=alt.Scale(scheme="reds", domain=[0, 1])),
        tooltip=[alt.Tooltip("purity:Q", format=".3f"), "length_cm:O", "bandwidth_nm:O"],
    ).properties(title="Heralded purity")


def stats_chart(table: pd.DataFrame, x: str) -> alt.Chart:
    base = alt.Chart(table).encode(x=alt.X(f"{x}:Q", title=x, scale=alt.Scale(type="log")))
    rates = base.mark_line(point=True).encode(y=alt.Y("N_si:Q", title="Coincidences", scale=alt.Scale(type="log")))
    g2h = base.mark_line(point=True, color="#F97316").encode(y=alt.Y("g2h:Q", title="Heralded g2(0)"))
    car = base.mark_line(point=True, color="#10B981").encode(
        y=alt.Y("CAR:Q", title="CAR", scale=alt.Scale(type="log")))
    return alt.hconcat(rates.properties(width=240, height=220), car.properties(width=240, height=220),
                       g2h.properties(width=240, height=220))


def overlap_heatmap(report: OverlapReport) -> alt.Chart:
    df = report.to_frame().reset_index(names="a").melt(id_vars=["a"], var_name="b", value_name="overlap")
    heat = alt.Chart(df).mark_rect().encode(
        x=alt.X("a:N", title=None), y=alt.Y("b:N", title=None),
        color=alt.Color("overlap:Q", scale=alt.Scale(scheme="blues", domain=[0, 1])),
    )
    text = alt.Chart(df).mark_text(fontSize=11).encode(
        x="a:N", y="b:N", text=alt.Text("overlap:Q", format=".3f"),
    )
    return (heat + text).properties(width=260, height=260, title="JSI overlaps (flat-phase upper bound)")
