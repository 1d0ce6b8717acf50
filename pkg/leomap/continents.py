"""Static ISO 3166-1 alpha-2 country to continent table."""

from __future__ import annotations

NORTH_AMERICA = "North America"
SOUTH_AMERICA = "South America"
EUROPE = "Europe"
ASIA = "Asia"
OCEANIA = "Oceania"
AFRICA = "Africa"
ANTARCTICA = "Antarctica"

CONTINENTS = (NORTH_AMERICA, SOUTH_AMERICA, EUROPE, ASIA, OCEANIA, AFRICA, ANTARCTICA)

_BY_CONTINENT: dict[str, str] = {
    NORTH_AMERICA: (
        "AG AI AW BB BL BM BQ BS BZ CA CR CU CW DM DO GD GL GP GT HN HT JM KN KY "
        "LC MF MQ MS MX NI PA PM PR SV SX TC TT US VC VG VI UM"
    ),
    SOUTH_AMERICA: "AR BO BR CL CO EC FK GF GY PE PY SR UY VE",
    EUROPE: (
        "AD AL AT AX BA BE BG BY CH CZ DE DK EE ES FI FO FR GB GG GI GR HR HU IE "
        "IM IS IT JE LI LT LU LV MC MD ME MK MT NL NO PL PT RO RS RU SE SI SJ SK "
        "SM UA VA XK"
    ),
    ASIA: (
        "AE AF AM AZ BD BH BN BT CC CN CX CY GE HK ID IL IN IO IQ IR JO JP KG KH "
        "KP KR KW KZ LA LB LK MM MN MO MV MY NP OM PH PK PS QA SA SG SY TH TJ TL "
        "TM TR TW UZ VN YE"
    ),
    OCEANIA: (
        "AS AU CK FJ FM GU KI MH MP NC NF NR NU NZ PF PG PN PW SB TK TO TV VU WF WS"
    ),
    AFRICA: (
        "AO BF BI BJ BW CD CF CG CI CM CV DJ DZ EG EH ER ET GA GH GM GN GQ GW KE "
        "KM LR LS LY MA MG ML MR MU MW MZ NA NE NG RE RW SC SD SH SL SN SO SS ST "
        "SZ TD TG TN TZ UG YT ZA ZM ZW"
    ),
    ANTARCTICA: "AQ BV GS HM TF",
}

COUNTRY_TO_CONTINENT: dict[str, str] = {
    code: continent
    for continent, codes in _BY_CONTINENT.items()
    for code in codes.split()
}
