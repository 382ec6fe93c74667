from dronecharge.cli import main_exit

main_exit()
