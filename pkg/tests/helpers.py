from readmit_ta.kb import CHART, builtin_readmission_kb
from readmit_ta.series import Sample, StayRecord

DAY = 86400
T2005 = 1104537600  # 2005-01-01T00:00:00Z
KB = builtin_readmission_kb()


def sufficient_samples(icu_in):
    """One reading per lab and five per chart, all mid-range and inside the stay."""
    out = []
    for c in KB:
        lo, hi = c.state_cutoffs[0].bound, c.state_cutoffs[1].bound
        n = 5 if c.kind == CHART else 1
        out += [Sample(c.concept_id, icu_in + 3600 * (i + 1), (lo + hi) / 2) for i in range(n)]
    return out


def stay(stay_id, patient_id="p1", icu_in=T2005 + 30 * DAY, los_days=5.0, age=45, gender="male",
         death_time=None, samples=None, insurance="Medicare"):
    icu_out = icu_in + int(los_days * DAY)
    return StayRecord(stay_id, patient_id, icu_in, icu_out, age, gender, insurance, death_time,
                      sufficient_samples(icu_in) if samples is None else samples)
