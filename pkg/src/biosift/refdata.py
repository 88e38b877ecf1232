"""Per-site part-count frequencies measured on the annotated training split.

Every annotated site contains at least one digestion tank (three being
the most common count), while pile counts spread wider. These histograms
are the default input for prior fitting and for the standard synthetic
scenario.
"""

# fraction of training sites with the given number of digestion tanks
TANK_COUNT_FREQ = {
    1: 0.06897,
    2: 0.31418,
    3: 0.36015,
    4: 0.14943,
    5: 0.06897,
    6: 0.01533,
    7: 0.01916,
    8: 0.00383,
}

# fraction of training sites with the given number of biomass piles
PILE_COUNT_FREQ = {
    0: 0.01533,
    1: 0.06130,
    2: 0.10345,
    3: 0.16092,
    4: 0.16475,
    5: 0.12644,
    6: 0.11494,
    7: 0.08812,
    8: 0.07280,
    9: 0.04598,
    10: 0.01916,
    11: 0.00766,
    12: 0.01149,
    13: 0.00383,
    14: 0.00383,
}
