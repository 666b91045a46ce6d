"""Regenerate src/anycensus/data/cities500.tsv.

About 150 real metropolitan areas (rounded coordinates, approximate metro
populations) plus seeded small towns scattered around them, 500 rows total.
"""

import math
import random
from pathlib import Path

METROS = """
Tokyo 35.68 139.69 37400000
Delhi 28.61 77.21 31000000
Shanghai 31.23 121.47 27000000
Sao Paulo -23.55 -46.63 22000000
Mexico City 19.43 -99.13 21800000
Cairo 30.04 31.24 21000000
Mumbai 19.08 72.88 20400000
Beijing 39.90 116.41 20400000
Dhaka 23.81 90.41 21000000
Osaka 34.69 135.50 19100000
New York 40.71 -74.01 18800000
Karachi 24.86 67.01 16000000
Buenos Aires -34.60 -58.38 15200000
Chongqing 29.56 106.55 15800000
Istanbul 41.01 28.98 15200000
Kolkata 22.57 88.36 14900000
Manila 14.60 120.98 13900000
Lagos 6.52 3.38 14300000
Rio de Janeiro -22.91 -43.17 13500000
Tianjin 39.34 117.36 13600000
Kinshasa -4.44 15.27 14300000
Guangzhou 23.13 113.26 13300000
Los Angeles 34.05 -118.24 12400000
Moscow 55.76 37.62 12500000
Shenzhen 22.54 114.06 12400000
Lahore 31.55 74.34 12600000
Bangalore 12.97 77.59 12300000
Paris 48.86 2.35 11000000
Bogota 4.71 -74.07 10900000
Jakarta -6.21 106.85 10700000
Chennai 13.08 80.27 10900000
Lima -12.05 -77.04 10700000
Bangkok 13.76 100.50 10500000
Seoul 37.57 126.98 9900000
Nagoya 35.18 136.91 9500000
Hyderabad 17.39 78.49 10000000
London 51.51 -0.13 9300000
Tehran 35.69 51.39 9100000
Chicago 41.88 -87.63 8900000
Chengdu 30.57 104.07 9100000
Nanjing 32.06 118.80 8800000
Wuhan 30.59 114.31 8300000
Ho Chi Minh City 10.82 106.63 8600000
Luanda -8.84 13.23 8300000
Ahmedabad 23.02 72.57 8100000
Kuala Lumpur 3.14 101.69 7800000
Hong Kong 22.32 114.17 7500000
Riyadh 24.71 46.68 7200000
Baghdad 33.31 44.36 7100000
Santiago -33.45 -70.67 6800000
Surat 21.17 72.83 7200000
Madrid 40.42 -3.70 6700000
Pune 18.52 73.86 6600000
Houston 29.76 -95.37 6300000
Dallas 32.78 -96.80 6500000
Toronto 43.65 -79.38 6200000
Dar es Salaam -6.79 39.21 6700000
Miami 25.76 -80.19 6100000
Belo Horizonte -19.92 -43.94 6000000
Singapore 1.35 103.82 5900000
Philadelphia 39.95 -75.17 5700000
Atlanta 33.75 -84.39 5900000
Fukuoka 33.59 130.40 5500000
Khartoum 15.50 32.56 5800000
Barcelona 41.39 2.17 5600000
Johannesburg -26.20 28.05 5800000
Saint Petersburg 59.93 30.34 5400000
Washington 38.91 -77.04 5300000
Alexandria 31.20 29.92 5300000
Yangon 16.87 96.20 5300000
Guadalajara 20.66 -103.35 5200000
Sydney -33.87 151.21 5300000
Melbourne -37.81 144.96 5100000
Abidjan 5.36 -4.01 5200000
Ankara 39.93 32.86 5100000
Monterrey 25.69 -100.32 5000000
Nairobi -1.29 36.82 4900000
Boston 42.36 -71.06 4900000
Phoenix 33.45 -112.07 4900000
Berlin 52.52 13.40 4500000
Cape Town -33.92 18.42 4700000
Jeddah 21.49 39.19 4700000
Casablanca 33.57 -7.59 3800000
San Francisco 37.77 -122.42 4700000
Montreal 45.50 -73.57 4200000
Detroit 42.33 -83.05 4300000
Seattle 47.61 -122.33 4000000
Kabul 34.56 69.21 4400000
Rome 41.90 12.50 4300000
Accra 5.60 -0.19 4200000
Brasilia -15.79 -47.88 4800000
Recife -8.05 -34.88 4100000
Fortaleza -3.73 -38.53 4100000
Porto Alegre -30.03 -51.23 4300000
Medellin 6.24 -75.58 4000000
Algiers 36.75 3.06 2900000
Athens 37.98 23.73 3200000
Milan 45.46 9.19 3200000
Kyiv 50.45 30.52 3000000
Lisbon 38.72 -9.14 2900000
Taipei 25.03 121.57 7000000
Hanoi 21.03 105.85 5000000
Addis Ababa 9.03 38.74 5000000
Minneapolis 44.98 -93.27 3700000
San Diego 32.72 -117.16 3300000
Denver 39.74 -104.99 2900000
Tampa 27.95 -82.46 3200000
Vancouver 49.28 -123.12 2600000
Manchester 53.48 -2.24 2800000
Birmingham 52.49 -1.89 2600000
Hamburg 53.55 9.99 2500000
Munich 48.14 11.58 2600000
Frankfurt 50.11 8.68 2300000
Vienna 48.21 16.37 1900000
Warsaw 52.23 21.01 1800000
Budapest 47.50 19.04 1800000
Bucharest 44.43 26.10 1800000
Amsterdam 52.37 4.90 1600000
Stockholm 59.33 18.07 1600000
Brussels 50.85 4.35 2100000
Copenhagen 55.68 12.57 1400000
Dublin 53.35 -6.26 1400000
Zurich 47.38 8.54 1400000
Prague 50.08 14.44 1300000
Oslo 59.91 10.75 1000000
Helsinki 60.17 24.94 1300000
Marseille 43.30 5.37 1800000
Lyon 45.76 4.84 1700000
Auckland -36.85 174.76 1700000
Perth -31.95 115.86 2100000
Brisbane -27.47 153.03 2500000
Adelaide -34.93 138.60 1400000
Dubai 25.20 55.27 3500000
Tel Aviv 32.09 34.78 4000000
Doha 25.29 51.53 2400000
Karaj 35.84 50.94 1900000
Tashkent 41.30 69.24 2500000
Almaty 43.24 76.89 2000000
Novosibirsk 55.01 82.93 1600000
Vladivostok 43.12 131.89 600000
Busan 35.18 129.08 3400000
Manaus -3.12 -60.02 2200000
Quito -0.18 -78.47 2000000
Caracas 10.48 -66.90 2900000
Havana 23.11 -82.37 2100000
Panama City 8.98 -79.52 1900000
Lusaka -15.39 28.32 3000000
Harare -17.83 31.05 2100000
Dakar 14.72 -17.47 3300000
Kampala 0.35 32.58 3600000
Anchorage 61.22 -149.90 290000
Honolulu 21.31 -157.86 1000000
Reykjavik 64.15 -21.94 230000
""".strip().splitlines()


def offset(lat, lon, km, bearing):
    r = km / 6371.0
    la1, lo1, b = math.radians(lat), math.radians(lon), math.radians(bearing)
    la2 = math.asin(math.sin(la1) * math.cos(r) + math.cos(la1) * math.sin(r) * math.cos(b))
    lo2 = lo1 + math.atan2(math.sin(b) * math.sin(r) * math.cos(la1), math.cos(r) - math.sin(la1) * math.sin(la2))
    return round(math.degrees(la2), 4), round((math.degrees(lo2) + 540) % 360 - 180, 4)


def main():
    rows = []
    for line in METROS:
        *name, lat, lon, pop = line.split()
        rows.append((" ".join(name), float(lat), float(lon), int(pop)))
    rng = random.Random(500)
    anchors = list(rows)
    i = 0
    while len(rows) < 500:
        name, lat, lon, _ = rng.choice(anchors)
        la, lo = offset(lat, lon, rng.uniform(40, 600), rng.uniform(0, 360))
        i += 1
        rows.append((f"{name} Outer {i:03d}", la, lo, rng.randint(5_000, 400_000)))
    out = Path(__file__).resolve().parents[1] / "src" / "anycensus" / "data" / "cities500.tsv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("name\tlat\tlon\tpopulation\n")
        for name, lat, lon, pop in rows:
            fh.write(f"{name}\t{lat}\t{lon}\t{pop}\n")


if __name__ == "__main__":
    main()
