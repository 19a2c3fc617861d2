"""Clinical code catalog shared by the generator, feature extraction and rules."""

# Vital signs are keyed by short name.
VITALS = ("bmi", "rr", "hr", "spo2", "sbp", "dbp", "temp", "glucose")

# Fluids in/out, LOINC-coded.
FLUIDS = {
    "9000-1": "oral_intake",
    "8975-5": "iv_intake",
    "9187-6": "urine_output",
    "9210-6": "wound_drain",
    "9252-8": "balance_8h",
}
FLUID_TRENDS = ("9252-8", "9187-6")  # 8-hour balance, urine output

# Lab items: LOINC -> (name, canonical unit)
LABS = {
    "2951-2": ("sodium", "mmol/L"),
    "2823-3": ("potassium", "mmol/L"),
    "2075-0": ("chloride", "mmol/L"),
    "1963-8": ("bicarbonate", "mmol/L"),
    "3094-0": ("bun", "mg/dL"),
    "2160-0": ("creatinine", "mg/dL"),
    "2345-7": ("glucose_serum", "mg/dL"),
    "17861-6": ("calcium", "mg/dL"),
    "6690-2": ("wbc", "10*3/uL"),
    "718-7": ("hemoglobin", "g/dL"),
    "777-3": ("platelets", "/uL"),
    "1975-2": ("bilirubin", "mg/dL"),
    "1742-6": ("alt", "U/L"),
    "5902-2": ("pt", "s"),
    "1988-5": ("crp", "mg/L"),
    "2601-3": ("magnesium", "mg/dL"),
    "2744-1": ("ph_arterial", "pH"),
    "2019-8": ("pco2_arterial", "mm[Hg]"),
    "2703-7": ("po2_arterial", "mm[Hg]"),
    "2524-7": ("lactate", "mmol/L"),
    "10839-9": ("troponin_i", "ug/L"),
}

# ATC codes (7-character, level 5) used for synthetic medication administration.
MEDS = ("B01AC06", "N02BE01", "C09AA02", "A02BC01", "C10AA05", "B01AB05", "C07AB02",
        "A10AB01", "N05BA01", "R03AC02")
MEDS_DETERIORATION = ("J01DD04", "C03CA01", "J01CR05", "H02AB02")


def lab_column(loinc: str) -> str:
    """Identifier-safe column stem for a LOINC code: 2524-7 -> lab_2524_7."""
    return "lab_" + loinc.replace("-", "_")


def fluid_column(loinc: str) -> str:
    return FLUIDS.get(loinc, "fluid_" + loinc.replace("-", "_"))
