"""Regenerate the delivery example: peak-hour orders over an 8 km x 6 km city
and 32 branches whose capacities add up to the order volume."""
from pathlib import Path

import numpy as np

from sdot1.measures import DiscreteMeasure, write_density_csv, write_measure
from sdot1.synthetic import mixture_grid

HERE = Path(__file__).parent
BOUNDS = (0.0, 0.0, 8.0, 6.0)
ORDERS = 1000.0  # expected orders at peak time


def main():
    # dense center in the north, a secondary hub in the east, sparse suburbs
    means = [(4.2, 4.6), (5.0, 4.0), (6.6, 2.4), (2.0, 2.2), (3.4, 1.0)]
    variances = [0.5, 0.9, 0.6, 1.2, 0.8]
    weights = [3.0, 2.0, 1.2, 0.6, 0.5]
    orders = mixture_grid(means, variances, weights, BOUNDS, 160, 120, floor=0.15,
                          total_mass=ORDERS)
    write_density_csv(orders, HERE / "orders.csv")

    # branches are spread more evenly than the orders
    rng = np.random.default_rng(2024)
    sites = np.c_[rng.uniform(0.4, 7.6, 32), rng.uniform(0.4, 5.6, 32)]
    double = np.zeros(32, bool)
    double[rng.choice(32, 5, replace=False)] = True
    cap = np.where(double, 2.0, 1.0)
    write_measure(DiscreteMeasure(sites, cap * ORDERS / cap.sum()), HERE / "branches.csv")


if __name__ == "__main__":
    main()
